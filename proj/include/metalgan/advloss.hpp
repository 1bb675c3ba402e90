#pragma once

#include <vector>

#include "metalgan/netcore.hpp"
#include "metalgan/tensor.hpp"

namespace metalgan::advloss {

enum class Label { kReal, kFake };

struct LossWeights {
  double w_adv = 1.0;
  double w_l1 = 100.0;
};

void validate(const LossWeights& w);

// Flat gradient of one loss evaluation with respect to a single network's
// parameter vector.
struct GradientBundle {
  std::vector<double> vector;
  double loss_value = 0.0;
  double loss_adv = 0.0;  // generator: adversarial term; discriminator: real term
  double loss_l1 = 0.0;   // generator: L1 term; discriminator: fake term
};

// Mean binary cross-entropy of realness scores against a constant label.
double adversarial_loss(const Tensor& scores, Label label);

double l1_loss(const Tensor& pred_ab, const Tensor& target_ab);

double combined_loss(double adv, double l1, const LossWeights& w);

// Gradient of w_adv * BCE(D(compose(L, G(L))), real) + w_l1 * L1(G(L), target)
// w.r.t. the generator parameters; the discriminator is read-only.
GradientBundle generator_gradient(netcore::UNetGenerator& g, netcore::Discriminator& d,
                                  const Tensor& l_batch, const Tensor& target_ab,
                                  const LossWeights& w);

// Gradient of BCE(D(target_lab), real) + BCE(D(compose(L, G(L))), fake)
// w.r.t. the discriminator parameters; the generator is read-only.
GradientBundle discriminator_gradient(netcore::Discriminator& d, netcore::UNetGenerator& g,
                                      const Tensor& l_batch, const Tensor& target_ab);

// L batch (B,1,H,W) + ab batch (B,2,H,W) -> Lab batch (B,3,H,W).
Tensor concat_lab(const Tensor& l_batch, const Tensor& ab_batch);

}  // namespace metalgan::advloss
