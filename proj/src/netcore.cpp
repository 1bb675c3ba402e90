#include "metalgan/netcore.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

#include "metalgan/rng.hpp"

namespace metalgan::netcore {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;

int conv_out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Gathers k*k patches of a (C,Himg,Wimg) plane into a (C*k*k) x (Hg*Wg)
// matrix; entry [(c,kh,kw),(gh,gw)] = x[c, gh*s-p+kh, gw*s-p+kw], zero outside.
void im2col(const double* x, int C, int Himg, int Wimg, int k, int s, int p,
            int Hg, int Wg, Eigen::MatrixXd& col) {
  col.setZero(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(Hg) * Wg);
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * Himg * Wimg;
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + kh) * k + kw;
        for (int gh = 0; gh < Hg; ++gh) {
          const int ih = gh * s - p + kh;
          if (ih < 0 || ih >= Himg) continue;
          for (int gw = 0; gw < Wg; ++gw) {
            const int iw = gw * s - p + kw;
            if (iw < 0 || iw >= Wimg) continue;
            col(row, static_cast<Eigen::Index>(gh) * Wg + gw) = xc[ih * Wimg + iw];
          }
        }
      }
  }
}

// Adjoint of im2col: scatter-adds columns back into the (C,Himg,Wimg) plane.
void col2im(const Eigen::MatrixXd& col, int C, int Himg, int Wimg, int k, int s,
            int p, int Hg, int Wg, double* x) {
  for (int c = 0; c < C; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * Himg * Wimg;
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + kh) * k + kw;
        for (int gh = 0; gh < Hg; ++gh) {
          const int ih = gh * s - p + kh;
          if (ih < 0 || ih >= Himg) continue;
          for (int gw = 0; gw < Wg; ++gw) {
            const int iw = gw * s - p + kw;
            if (iw < 0 || iw >= Wimg) continue;
            xc[ih * Wimg + iw] += col(row, static_cast<Eigen::Index>(gh) * Wg + gw);
          }
        }
      }
  }
}

void fill_normal(std::vector<double>& w, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : w) v = dist(rng);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out({B, Ca + Cb, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int bi = 0; bi < B; ++bi) {
    std::copy(a.data() + bi * Ca * plane, a.data() + (bi + 1) * Ca * plane,
              out.data() + bi * (Ca + Cb) * plane);
    std::copy(b.data() + bi * Cb * plane, b.data() + (bi + 1) * Cb * plane,
              out.data() + (bi * (Ca + Cb) + Ca) * plane);
  }
  return out;
}

void split_channels(const Tensor& x, int Ca, Tensor& a, Tensor& b) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cb = C - Ca;
  a = Tensor({B, Ca, H, W});
  b = Tensor({B, Cb, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int bi = 0; bi < B; ++bi) {
    std::copy(x.data() + bi * C * plane, x.data() + (bi * C + Ca) * plane,
              a.data() + bi * Ca * plane);
    std::copy(x.data() + (bi * C + Ca) * plane, x.data() + (bi + 1) * C * plane,
              b.data() + bi * Cb * plane);
  }
}

void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

void Layer::zero_grad() {
  for (ParamBlock pb : params())
    std::fill(pb.grad, pb.grad + pb.n, 0.0);
}

// --------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
  weight_.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel, 0.0);
  bias_.assign(out_ch, 0.0);
  gweight_.assign(weight_.size(), 0.0);
  gbias_.assign(bias_.size(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (x.dim(1) != in_ch_)
    throw std::invalid_argument("Conv2d: channel mismatch " + x.shape_str());
  const int Ho = conv_out_dim(H, kernel_, stride_, pad_);
  const int Wo = conv_out_dim(W, kernel_, stride_, pad_);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("Conv2d: input too small");
  x_cache_ = x;
  Tensor y({B, out_ch_, Ho, Wo});
  MapRowC Wm(weight_.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * kernel_ * kernel_);
  Eigen::MatrixXd col;
  for (int b = 0; b < B; ++b) {
    im2col(x.data() + static_cast<std::size_t>(b) * in_ch_ * H * W, in_ch_, H, W,
           kernel_, stride_, pad_, Ho, Wo, col);
    MapRow Ym(y.data() + static_cast<std::size_t>(b) * out_ch_ * Ho * Wo, out_ch_,
              static_cast<Eigen::Index>(Ho) * Wo);
    Ym.noalias() = Wm * col;
    for (int c = 0; c < out_ch_; ++c) Ym.row(c).array() += bias_[c];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int Ho = dy.dim(2), Wo = dy.dim(3);
  Tensor dx({B, in_ch_, H, W});
  MapRowC Wm(weight_.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * kernel_ * kernel_);
  MapRow gWm(gweight_.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * kernel_ * kernel_);
  Eigen::MatrixXd col, dcol;
  for (int b = 0; b < B; ++b) {
    MapRowC dYm(dy.data() + static_cast<std::size_t>(b) * out_ch_ * Ho * Wo, out_ch_,
                static_cast<Eigen::Index>(Ho) * Wo);
    im2col(x.data() + static_cast<std::size_t>(b) * in_ch_ * H * W, in_ch_, H, W,
           kernel_, stride_, pad_, Ho, Wo, col);
    gWm.noalias() += dYm * col.transpose();
    for (int c = 0; c < out_ch_; ++c) gbias_[c] += dYm.row(c).sum();
    dcol.noalias() = Wm.transpose() * dYm;
    col2im(dcol, in_ch_, H, W, kernel_, stride_, pad_, Ho, Wo,
           dx.data() + static_cast<std::size_t>(b) * in_ch_ * H * W);
  }
  return dx;
}

std::vector<ParamBlock> Conv2d::params() {
  return {{weight_.data(), gweight_.data(), weight_.size()},
          {bias_.data(), gbias_.data(), bias_.size()}};
}

// ------------------------------------------------------------ ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
  weight_.assign(static_cast<std::size_t>(in_ch) * out_ch * kernel * kernel, 0.0);
  bias_.assign(out_ch, 0.0);
  gweight_.assign(weight_.size(), 0.0);
  gbias_.assign(bias_.size(), 0.0);
}

Tensor ConvTranspose2d::forward(const Tensor& x, bool) {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (x.dim(1) != in_ch_)
    throw std::invalid_argument("ConvTranspose2d: channel mismatch " + x.shape_str());
  const int Ho = (H - 1) * stride_ - 2 * pad_ + kernel_;
  const int Wo = (W - 1) * stride_ - 2 * pad_ + kernel_;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("ConvTranspose2d: bad geometry");
  x_cache_ = x;
  Tensor y({B, out_ch_, Ho, Wo});
  MapRowC Wm(weight_.data(), in_ch_, static_cast<Eigen::Index>(out_ch_) * kernel_ * kernel_);
  Eigen::MatrixXd cols;
  for (int b = 0; b < B; ++b) {
    MapRowC Xm(x.data() + static_cast<std::size_t>(b) * in_ch_ * H * W, in_ch_,
               static_cast<Eigen::Index>(H) * W);
    cols.noalias() = Wm.transpose() * Xm;  // (out*k*k) x (H*W)
    double* yb = y.data() + static_cast<std::size_t>(b) * out_ch_ * Ho * Wo;
    col2im(cols, out_ch_, Ho, Wo, kernel_, stride_, pad_, H, W, yb);
    for (int c = 0; c < out_ch_; ++c) {
      double* yc = yb + static_cast<std::size_t>(c) * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) yc[i] += bias_[c];
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int Ho = dy.dim(2), Wo = dy.dim(3);
  Tensor dx({B, in_ch_, H, W});
  MapRowC Wm(weight_.data(), in_ch_, static_cast<Eigen::Index>(out_ch_) * kernel_ * kernel_);
  MapRow gWm(gweight_.data(), in_ch_, static_cast<Eigen::Index>(out_ch_) * kernel_ * kernel_);
  Eigen::MatrixXd dcols;
  for (int b = 0; b < B; ++b) {
    im2col(dy.data() + static_cast<std::size_t>(b) * out_ch_ * Ho * Wo, out_ch_, Ho, Wo,
           kernel_, stride_, pad_, H, W, dcols);
    MapRowC Xm(x.data() + static_cast<std::size_t>(b) * in_ch_ * H * W, in_ch_,
               static_cast<Eigen::Index>(H) * W);
    MapRow dXm(dx.data() + static_cast<std::size_t>(b) * in_ch_ * H * W, in_ch_,
               static_cast<Eigen::Index>(H) * W);
    dXm.noalias() = Wm * dcols;
    gWm.noalias() += Xm * dcols.transpose();
    const double* dyb = dy.data() + static_cast<std::size_t>(b) * out_ch_ * Ho * Wo;
    for (int c = 0; c < out_ch_; ++c) {
      const double* dyc = dyb + static_cast<std::size_t>(c) * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) gbias_[c] += dyc[i];
    }
  }
  return dx;
}

std::vector<ParamBlock> ConvTranspose2d::params() {
  return {{weight_.data(), gweight_.data(), weight_.size()},
          {bias_.data(), gbias_.data(), bias_.size()}};
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.assign(channels, 1.0);
  beta_.assign(channels, 0.0);
  ggamma_.assign(channels, 0.0);
  gbeta_.assign(channels, 0.0);
  running_mean_.assign(channels, 0.0);
  running_var_.assign(channels, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  used_batch_stats_ = training && B >= 2;
  x_cache_ = x;
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  if (used_batch_stats_) {
    mean_.assign(C, 0.0);
    var_.assign(C, 0.0);
    const double n = static_cast<double>(B) * plane;
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* xc = x.data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += xc[i];
          s2 += xc[i] * xc[i];
        }
      }
      mean_[c] = s / n;
      var_[c] = s2 / n - mean_[c] * mean_[c];
      if (var_[c] < 0.0) var_[c] = 0.0;
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean_[c];
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var_[c];
    }
  } else {
    mean_ = running_mean_;
    var_ = running_var_;
  }
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var_[c] + eps_);
    for (int b = 0; b < B; ++b) {
      const double* xc = x.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      double* yc = y.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        yc[i] = gamma_[c] * (xc[i] - mean_[c]) * inv + beta_[c];
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double n = static_cast<double>(B) * plane;
  Tensor dx(x.shape());
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var_[c] + eps_);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* xc = x.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      const double* dc = dy.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (xc[i] - mean_[c]) * inv;
        sum_dy += dc[i];
        sum_dy_xhat += dc[i] * xhat;
      }
    }
    ggamma_[c] += sum_dy_xhat;
    gbeta_[c] += sum_dy;
    for (int b = 0; b < B; ++b) {
      const double* xc = x.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      const double* dc = dy.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      double* dxc = dx.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (used_batch_stats_) {
          const double xhat = (xc[i] - mean_[c]) * inv;
          dxc[i] = gamma_[c] * inv *
                   (dc[i] - sum_dy / n - xhat * sum_dy_xhat / n);
        } else {
          dxc[i] = gamma_[c] * inv * dc[i];
        }
      }
    }
  }
  return dx;
}

std::vector<ParamBlock> BatchNorm2d::params() {
  return {{gamma_.data(), ggamma_.data(), gamma_.size()},
          {beta_.data(), gbeta_.data(), beta_.size()}};
}

std::vector<double*> BatchNorm2d::buffer_views() {
  std::vector<double*> v;
  v.reserve(2 * channels_);
  for (double& m : running_mean_) v.push_back(&m);
  for (double& s : running_var_) v.push_back(&s);
  return v;
}

// ---------------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, bool) {
  x_cache_ = x;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = x_cache_[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool) {
  x_cache_ = x;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = x_cache_[i] > 0.0 ? dy[i] : slope_ * dy[i];
  return dx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  y_cache_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = dy[i] * (1.0 - y_cache_[i] * y_cache_[i]);
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  y_cache_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = dy[i] * y_cache_[i] * (1.0 - y_cache_[i]);
  return dx;
}

// --------------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : in_f_(in_features), out_f_(out_features) {
  weight_.assign(static_cast<std::size_t>(out_features) * in_features, 0.0);
  bias_.assign(out_features, 0.0);
  gweight_.assign(weight_.size(), 0.0);
  gbias_.assign(bias_.size(), 0.0);
}

Tensor Linear::forward(const Tensor& x, bool) {
  const int B = x.dim(0);
  if (x.rank() != 2 || x.dim(1) != in_f_)
    throw std::invalid_argument("Linear: expected (B," + std::to_string(in_f_) + ")");
  x_cache_ = x;
  Tensor y({B, out_f_});
  MapRowC Xm(x.data(), B, in_f_);
  MapRowC Wm(weight_.data(), out_f_, in_f_);
  MapRow Ym(y.data(), B, out_f_);
  Ym.noalias() = Xm * Wm.transpose();
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < out_f_; ++o) Ym(b, o) += bias_[o];
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int B = x_cache_.dim(0);
  Tensor dx({B, in_f_});
  MapRowC dYm(dy.data(), B, out_f_);
  MapRowC Xm(x_cache_.data(), B, in_f_);
  MapRowC Wm(weight_.data(), out_f_, in_f_);
  MapRow gWm(gweight_.data(), out_f_, in_f_);
  MapRow dXm(dx.data(), B, in_f_);
  gWm.noalias() += dYm.transpose() * Xm;
  for (int o = 0; o < out_f_; ++o) gbias_[o] += dYm.col(o).sum();
  dXm.noalias() = dYm * Wm;
  return dx;
}

std::vector<ParamBlock> Linear::params() {
  return {{weight_.data(), gweight_.data(), weight_.size()},
          {bias_.data(), gbias_.data(), bias_.size()}};
}

// -------------------------------------------------------------------- Network

std::vector<ParamBlock> Network::params() {
  std::vector<ParamBlock> out;
  for (Layer* l : layer_ptrs_)
    for (ParamBlock pb : l->params()) out.push_back(pb);
  return out;
}

std::size_t Network::param_count() {
  std::size_t n = 0;
  for (ParamBlock pb : params()) n += pb.n;
  return n;
}

std::vector<double> Network::flatten_params() {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (ParamBlock pb : params()) flat.insert(flat.end(), pb.value, pb.value + pb.n);
  return flat;
}

void Network::load_params(const std::vector<double>& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("load_params: length mismatch");
  std::size_t off = 0;
  for (ParamBlock pb : params()) {
    std::copy(flat.begin() + off, flat.begin() + off + pb.n, pb.value);
    off += pb.n;
  }
}

std::vector<double> Network::flatten_grads() {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (ParamBlock pb : params()) flat.insert(flat.end(), pb.grad, pb.grad + pb.n);
  return flat;
}

void Network::zero_grad() {
  for (Layer* l : layer_ptrs_) l->zero_grad();
}

std::vector<double> Network::flatten_buffers() {
  std::vector<double> flat;
  for (Layer* l : layer_ptrs_)
    for (double* p : l->buffer_views()) flat.push_back(*p);
  return flat;
}

void Network::load_buffers(const std::vector<double>& flat) {
  std::size_t off = 0;
  for (Layer* l : layer_ptrs_)
    for (double* p : l->buffer_views()) {
      if (off >= flat.size()) throw std::invalid_argument("load_buffers: too short");
      *p = flat[off++];
    }
  if (off != flat.size()) throw std::invalid_argument("load_buffers: too long");
}

void Network::sgd_step(double lr) {
  for (ParamBlock pb : params())
    for (std::size_t i = 0; i < pb.n; ++i) pb.value[i] -= lr * pb.grad[i];
}

// -------------------------------------------------------------- UNetGenerator

UNetGenerator::UNetGenerator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.depth < 1) throw std::invalid_argument("UNetGenerator: depth >= 1");
  auto width = [&](int i) { return cfg.base_width << i; };
  const int d = cfg.depth;
  for (int i = 0; i < d; ++i) {
    const int cin = (i == 0) ? cfg.in_ch : width(i - 1);
    enc_conv_.push_back(std::make_unique<Conv2d>(cin, width(i), 4, 2, 1));
    enc_bn_.push_back(std::make_unique<BatchNorm2d>(width(i)));
    enc_act_.push_back(std::make_unique<LeakyReLU>(0.2));
  }
  dec_conv_.resize(d);
  dec_bn_.resize(d);
  dec_act_.resize(d);
  for (int i = d - 1; i >= 0; --i) {
    const int cin = (i == d - 1) ? width(d - 1) : 2 * width(i);
    const int cout = (i == 0) ? cfg.out_ch : width(i - 1);
    dec_conv_[i] = std::make_unique<ConvTranspose2d>(cin, cout, 4, 2, 1);
    if (i > 0) {
      dec_bn_[i] = std::make_unique<BatchNorm2d>(cout);
      dec_act_[i] = std::make_unique<ReLU>();
    }
  }
  // Fixed layer order defines the flat parameter layout.
  for (int i = 0; i < d; ++i) {
    layer_ptrs_.push_back(enc_conv_[i].get());
    layer_ptrs_.push_back(enc_bn_[i].get());
  }
  for (int i = d - 1; i >= 0; --i) {
    layer_ptrs_.push_back(dec_conv_[i].get());
    if (i > 0) layer_ptrs_.push_back(dec_bn_[i].get());
  }

  std::mt19937_64 rng = make_rng(seed, "generator-init");
  for (int i = 0; i < d; ++i) {
    const int cin = (i == 0) ? cfg.in_ch : width(i - 1);
    fill_normal(enc_conv_[i]->weight(), std::sqrt(2.0 / (cin * 16.0)), rng);
  }
  for (int i = d - 1; i >= 0; --i) {
    const int cin = (i == d - 1) ? width(d - 1) : 2 * width(i);
    fill_normal(dec_conv_[i]->weight(), std::sqrt(2.0 / (cin * 16.0)), rng);
  }
}

Tensor UNetGenerator::forward(const Tensor& l_batch, bool training) {
  const int d = cfg_.depth;
  const int H = l_batch.dim(2), W = l_batch.dim(3);
  if (H % (1 << d) || W % (1 << d))
    throw std::invalid_argument("UNetGenerator: H,W must be divisible by 2^depth");
  enc_out_.assign(d, Tensor());
  Tensor cur = l_batch;
  for (int i = 0; i < d; ++i) {
    cur = enc_act_[i]->forward(enc_bn_[i]->forward(enc_conv_[i]->forward(cur, training), training), training);
    enc_out_[i] = cur;
  }
  for (int i = d - 1; i >= 0; --i) {
    if (i != d - 1) cur = concat_channels(cur, enc_out_[i]);
    cur = dec_conv_[i]->forward(cur, training);
    if (i > 0)
      cur = dec_act_[i]->forward(dec_bn_[i]->forward(cur, training), training);
    else
      cur = out_act_.forward(cur, training);
  }
  return cur;
}

Tensor UNetGenerator::backward(const Tensor& d_ab) {
  const int d = cfg_.depth;
  std::vector<Tensor> skip_grad(d);
  Tensor g = out_act_.backward(d_ab);
  for (int i = 0; i < d; ++i) {
    if (i > 0) g = dec_bn_[i]->backward(dec_act_[i]->backward(g));
    g = dec_conv_[i]->backward(g);
    if (i != d - 1) {
      Tensor up, skip;
      split_channels(g, g.dim(1) / 2, up, skip);
      skip_grad[i] = std::move(skip);
      g = std::move(up);
    }
  }
  for (int i = d - 1; i >= 0; --i) {
    g = enc_conv_[i]->backward(enc_bn_[i]->backward(enc_act_[i]->backward(g)));
    if (i > 0) add_inplace(g, skip_grad[i - 1]);
  }
  return g;
}

// -------------------------------------------------------------- Discriminator

Discriminator::Discriminator(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_blocks < 1) throw std::invalid_argument("Discriminator: n_blocks >= 1");
  auto width = [&](int i) { return cfg.base_width << i; };
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const int cin = (i == 0) ? cfg.in_ch : width(i - 1);
    conv_.push_back(std::make_unique<Conv2d>(cin, width(i), 4, 2, 1));
    bn_.push_back(std::make_unique<BatchNorm2d>(width(i)));
    act_.push_back(std::make_unique<ReLU>());
  }
  const int top = width(cfg.n_blocks - 1);
  if (cfg.patch_output)
    patch_head_ = std::make_unique<Conv2d>(top, 1, 1, 1, 0);
  else
    head_ = std::make_unique<Linear>(top, 1);

  for (int i = 0; i < cfg.n_blocks; ++i) {
    layer_ptrs_.push_back(conv_[i].get());
    layer_ptrs_.push_back(bn_[i].get());
  }
  if (patch_head_)
    layer_ptrs_.push_back(patch_head_.get());
  else
    layer_ptrs_.push_back(head_.get());

  std::mt19937_64 rng = make_rng(seed, "discriminator-init");
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const int cin = (i == 0) ? cfg.in_ch : width(i - 1);
    fill_normal(conv_[i]->weight(), std::sqrt(2.0 / (cin * 16.0)), rng);
  }
  if (patch_head_)
    fill_normal(patch_head_->weight(), std::sqrt(2.0 / top), rng);
  else
    fill_normal(head_->weight(), std::sqrt(2.0 / top), rng);
}

Tensor Discriminator::forward(const Tensor& lab_batch, bool training) {
  if (lab_batch.dim(1) != cfg_.in_ch)
    throw std::invalid_argument("Discriminator: expected " +
                                std::to_string(cfg_.in_ch) + " input channels");
  Tensor cur = lab_batch;
  for (int i = 0; i < cfg_.n_blocks; ++i)
    cur = act_[i]->forward(bn_[i]->forward(conv_[i]->forward(cur, training), training), training);
  if (cfg_.patch_output) {
    cur = patch_head_->forward(cur, training);
    return out_act_.forward(cur, training);
  }
  const int B = cur.dim(0), C = cur.dim(1), h = cur.dim(2), w = cur.dim(3);
  pool_shape_ = {B, C, h, w};
  Tensor pooled({B, C});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* p = cur.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      pooled[static_cast<std::size_t>(b) * C + c] = s / static_cast<double>(plane);
    }
  Tensor logits = head_->forward(pooled, training);  // (B,1)
  Tensor act = out_act_.forward(logits, training);
  Tensor scores({B});
  for (int b = 0; b < B; ++b) scores[b] = act[static_cast<std::size_t>(b)];
  return scores;
}

Tensor Discriminator::backward(const Tensor& d_scores) {
  Tensor g;
  if (cfg_.patch_output) {
    g = patch_head_->backward(out_act_.backward(d_scores));
  } else {
    const int B = d_scores.dim(0);
    Tensor d2({B, 1});
    for (int b = 0; b < B; ++b) d2[static_cast<std::size_t>(b)] = d_scores[b];
    Tensor dpooled = head_->backward(out_act_.backward(d2));  // (B,C)
    const int C = pool_shape_[1], h = pool_shape_[2], w = pool_shape_[3];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    g = Tensor({pool_shape_[0], C, h, w});
    for (int b = 0; b < pool_shape_[0]; ++b)
      for (int c = 0; c < C; ++c) {
        const double dv = dpooled[static_cast<std::size_t>(b) * C + c] / static_cast<double>(plane);
        double* p = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = dv;
      }
  }
  for (int i = cfg_.n_blocks - 1; i >= 0; --i)
    g = conv_[i]->backward(bn_[i]->backward(act_[i]->backward(g)));
  return g;
}

}  // namespace metalgan::netcore
