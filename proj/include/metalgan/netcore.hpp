#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "metalgan/tensor.hpp"

namespace metalgan::netcore {

// View into one layer's trainable storage; flatten/load walk these in order.
struct ParamBlock {
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t n = 0;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  // Accumulates parameter gradients, returns gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<ParamBlock> params() { return {}; }
  // Non-trainable state (batch-norm running stats); flat view for checkpoints.
  virtual std::vector<double*> buffer_views() { return {}; }
  void zero_grad();
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamBlock> params() override;

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }
  std::size_t param_count() const { return weight_.size() + bias_.size(); }

 private:
  int in_ch_, out_ch_, kernel_, stride_, pad_;
  std::vector<double> weight_, bias_, gweight_, gbias_;  // weight: (out, in*k*k)
  Tensor x_cache_;

 public:
  std::vector<double>& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }
};

// Transposed convolution; spatial size maps H -> (H-1)*stride - 2*pad + kernel.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamBlock> params() override;
  std::size_t param_count() const { return weight_.size() + bias_.size(); }

 private:
  int in_ch_, out_ch_, kernel_, stride_, pad_;
  std::vector<double> weight_, bias_, gweight_, gbias_;  // weight: (in, out*k*k)
  Tensor x_cache_;

 public:
  std::vector<double>& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }
};

// Batch statistics are used only when training with batch >= 2; a batch of
// one runs on the running statistics so single-sample training stays pure.
class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamBlock> params() override;
  std::vector<double*> buffer_views() override;
  int channels() const { return channels_; }

 private:
  int channels_;
  double momentum_, eps_;
  std::vector<double> gamma_, beta_, ggamma_, gbeta_;
  std::vector<double> running_mean_, running_var_;
  // backward caches
  bool used_batch_stats_ = false;
  Tensor x_cache_;
  std::vector<double> mean_, var_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_cache_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  double slope_;
  Tensor x_cache_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor y_cache_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor y_cache_;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features);
  Tensor forward(const Tensor& x, bool training) override;  // (B, in) -> (B, out)
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamBlock> params() override;
  std::size_t param_count() const { return weight_.size() + bias_.size(); }

 private:
  int in_f_, out_f_;
  std::vector<double> weight_, bias_, gweight_, gbias_;
  Tensor x_cache_;

 public:
  std::vector<double>& weight() { return weight_; }
  std::vector<double>& bias() { return bias_; }
};

// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int depth = 3;
  int base_width = 16;
  int in_ch = 1;
  int out_ch = 2;
};

struct DiscriminatorConfig {
  int n_blocks = 3;
  int base_width = 16;
  int in_ch = 3;
  bool patch_output = false;
};

// Base for parameter-vector handling shared by both networks.
class Network {
 public:
  virtual ~Network() = default;
  std::vector<ParamBlock> params();
  std::size_t param_count();
  std::vector<double> flatten_params();
  void load_params(const std::vector<double>& flat);
  std::vector<double> flatten_grads();
  void zero_grad();
  std::vector<double> flatten_buffers();
  void load_buffers(const std::vector<double>& flat);
  // theta <- theta - lr * grad
  void sgd_step(double lr);

 protected:
  std::vector<Layer*> layer_ptrs_;  // fixed order, set by subclass ctor
};

// Encoder-decoder with skip connections; maps a normalized L batch
// (B,1,H,W) to ab planes (B,2,H,W) in [-1,1]. H and W must be divisible
// by 2^depth.
class UNetGenerator : public Network {
 public:
  UNetGenerator(GeneratorConfig cfg, std::uint64_t seed);
  Tensor forward(const Tensor& l_batch, bool training);
  Tensor backward(const Tensor& d_ab);
  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  std::vector<std::unique_ptr<Conv2d>> enc_conv_;
  std::vector<std::unique_ptr<BatchNorm2d>> enc_bn_;
  std::vector<std::unique_ptr<LeakyReLU>> enc_act_;
  std::vector<std::unique_ptr<ConvTranspose2d>> dec_conv_;  // index i = level
  std::vector<std::unique_ptr<BatchNorm2d>> dec_bn_;        // levels > 0
  std::vector<std::unique_ptr<ReLU>> dec_act_;
  Tanh out_act_;
  std::vector<Tensor> enc_out_;  // forward caches for skip wiring
};

// Conv-BN-ReLU stack; scalar realness score per image through global average
// pooling and a linear head, or a per-location score map in patch mode.
class Discriminator : public Network {
 public:
  Discriminator(DiscriminatorConfig cfg, std::uint64_t seed);
  // Returns (B) scores in (0,1), or (B,1,h,w) in patch mode.
  Tensor forward(const Tensor& lab_batch, bool training);
  Tensor backward(const Tensor& d_scores);
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<std::unique_ptr<Conv2d>> conv_;
  std::vector<std::unique_ptr<BatchNorm2d>> bn_;
  std::vector<std::unique_ptr<ReLU>> act_;
  std::unique_ptr<Conv2d> patch_head_;
  std::unique_ptr<Linear> head_;
  Sigmoid out_act_;
  std::vector<int> pool_shape_;  // (B,C,h,w) entering the pooling stage
};

}  // namespace metalgan::netcore
