#include "metalgan/advloss.hpp"

#include <cmath>
#include <stdexcept>

namespace metalgan::advloss {

namespace {

double label_value(Label l) { return l == Label::kReal ? 1.0 : 0.0; }

void check_scores(const Tensor& s) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!(s[i] > 0.0 && s[i] < 1.0))
      throw std::invalid_argument("adversarial_loss: score outside (0,1)");
}

// d(mean BCE)/d(score)
Tensor bce_score_grad(const Tensor& s, Label label) {
  Tensor g(s.shape());
  const double n = static_cast<double>(s.size());
  if (label == Label::kReal)
    for (std::size_t i = 0; i < s.size(); ++i) g[i] = -1.0 / (s[i] * n);
  else
    for (std::size_t i = 0; i < s.size(); ++i) g[i] = 1.0 / ((1.0 - s[i]) * n);
  return g;
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite loss");
}

}  // namespace

void validate(const LossWeights& w) {
  if (w.w_adv < 0.0 || w.w_l1 < 0.0)
    throw std::invalid_argument("LossWeights: weights must be nonnegative");
  if (w.w_adv == 0.0 && w.w_l1 == 0.0)
    throw std::invalid_argument("LossWeights: weights must not both be zero");
}

double adversarial_loss(const Tensor& scores, Label label) {
  check_scores(scores);
  const double y = label_value(label);
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    acc += -(y * std::log(scores[i]) + (1.0 - y) * std::log(1.0 - scores[i]));
  return acc / static_cast<double>(scores.size());
}

double l1_loss(const Tensor& pred_ab, const Tensor& target_ab) {
  if (!pred_ab.same_shape(target_ab))
    throw std::invalid_argument("l1_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_ab.size(); ++i)
    acc += std::abs(pred_ab[i] - target_ab[i]);
  return acc / static_cast<double>(pred_ab.size());
}

double combined_loss(double adv, double l1, const LossWeights& w) {
  validate(w);
  if (!std::isfinite(adv) || !std::isfinite(l1))
    throw std::invalid_argument("combined_loss: non-finite input");
  return w.w_adv * adv + w.w_l1 * l1;
}

Tensor concat_lab(const Tensor& l_batch, const Tensor& ab_batch) {
  const int B = l_batch.dim(0), H = l_batch.dim(2), W = l_batch.dim(3);
  if (ab_batch.dim(0) != B || ab_batch.dim(2) != H || ab_batch.dim(3) != W ||
      l_batch.dim(1) != 1 || ab_batch.dim(1) != 2)
    throw std::invalid_argument("concat_lab: shape mismatch");
  Tensor lab({B, 3, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    std::copy(l_batch.data() + b * plane, l_batch.data() + (b + 1) * plane,
              lab.data() + static_cast<std::size_t>(b) * 3 * plane);
    std::copy(ab_batch.data() + static_cast<std::size_t>(b) * 2 * plane,
              ab_batch.data() + static_cast<std::size_t>(b + 1) * 2 * plane,
              lab.data() + (static_cast<std::size_t>(b) * 3 + 1) * plane);
  }
  return lab;
}

GradientBundle generator_gradient(netcore::UNetGenerator& g, netcore::Discriminator& d,
                                  const Tensor& l_batch, const Tensor& target_ab,
                                  const LossWeights& w) {
  validate(w);
  g.zero_grad();
  d.zero_grad();

  Tensor ab = g.forward(l_batch, /*training=*/true);
  Tensor lab_fake = concat_lab(l_batch, ab);
  Tensor scores = d.forward(lab_fake, /*training=*/false);

  GradientBundle out;
  out.loss_adv = adversarial_loss(scores, Label::kReal);  // non-saturating form
  out.loss_l1 = l1_loss(ab, target_ab);
  out.loss_value = combined_loss(out.loss_adv, out.loss_l1, w);
  check_finite(out.loss_value, "generator_gradient");

  // Adversarial path: through the frozen discriminator back to the ab planes.
  Tensor dscores = bce_score_grad(scores, Label::kReal);
  for (std::size_t i = 0; i < dscores.size(); ++i) dscores[i] *= w.w_adv;
  Tensor dlab = d.backward(dscores);

  const int B = ab.dim(0), H = ab.dim(2), W = ab.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor dab(ab.shape());
  const double n = static_cast<double>(ab.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < 2; ++c) {
      const double* dl = dlab.data() + (static_cast<std::size_t>(b) * 3 + 1 + c) * plane;
      double* p = dab.data() + (static_cast<std::size_t>(b) * 2 + c) * plane;
      const double* pr = ab.data() + (static_cast<std::size_t>(b) * 2 + c) * plane;
      const double* tg = target_ab.data() + (static_cast<std::size_t>(b) * 2 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        p[i] = dl[i] + w.w_l1 * sign0(pr[i] - tg[i]) / n;
    }

  g.backward(dab);
  out.vector = g.flatten_grads();
  d.zero_grad();  // the pass above is not a discriminator update
  return out;
}

GradientBundle discriminator_gradient(netcore::Discriminator& d, netcore::UNetGenerator& g,
                                      const Tensor& l_batch, const Tensor& target_ab) {
  d.zero_grad();

  GradientBundle out;
  Tensor lab_real = concat_lab(l_batch, target_ab);
  Tensor scores_r = d.forward(lab_real, /*training=*/true);
  out.loss_adv = adversarial_loss(scores_r, Label::kReal);
  d.backward(bce_score_grad(scores_r, Label::kReal));

  Tensor ab = g.forward(l_batch, /*training=*/false);
  Tensor lab_fake = concat_lab(l_batch, ab);
  Tensor scores_f = d.forward(lab_fake, /*training=*/true);
  out.loss_l1 = adversarial_loss(scores_f, Label::kFake);
  d.backward(bce_score_grad(scores_f, Label::kFake));

  out.loss_value = out.loss_adv + out.loss_l1;
  check_finite(out.loss_value, "discriminator_gradient");
  out.vector = d.flatten_grads();
  return out;
}

}  // namespace metalgan::advloss
