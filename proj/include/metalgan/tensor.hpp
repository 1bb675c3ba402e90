#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace metalgan {

// Dense row-major tensor of doubles, rank 1..4. Training batches use the
// (batch, channel, height, width) layout throughout.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4)
      throw std::invalid_argument("Tensor: rank must be 1..4");
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= static_cast<std::size_t>(d);
    }
    v_.assign(n, 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  // (b, c, h, w) accessor for rank-4 tensors.
  double& at(int b, int c, int h, int w) {
    return v_[idx4(b, c, h, w)];
  }
  double at(int b, int c, int h, int w) const {
    return v_[idx4(b, c, h, w)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + ")";
  }

 private:
  std::size_t idx4(int b, int c, int h, int w) const {
    const int C = shape_[1], H = shape_[2], W = shape_[3];
    return ((static_cast<std::size_t>(b) * C + c) * H + h) * W + w;
  }

  std::vector<int> shape_;
  std::vector<double> v_;
};

}  // namespace metalgan
