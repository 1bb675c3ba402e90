#include "metalgan/evalkit.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "metalgan/rng.hpp"

using nlohmann::json;

namespace metalgan::evalkit {

namespace {

constexpr double kProbFloor = 1e-12;

double clampp(double p) { return std::max(p, kProbFloor); }

}  // namespace

std::string ScoreReport::to_json() const {
  json j{{"mean", mean},
         {"std", std_dev},
         {"n_images", n_images},
         {"n_splits", n_splits},
         {"classifier_id", classifier_id}};
  return j.dump(2);
}

ScoreReport inception_score_from_probs(std::vector<std::vector<double>> probs,
                                       int n_splits, const std::string& classifier_id) {
  const int n = static_cast<int>(probs.size());
  if (n_splits < 1) throw std::invalid_argument("inception_score: n_splits >= 1");
  if (n < n_splits) throw std::invalid_argument("inception_score: need >= n_splits images");
  const std::size_t C = probs[0].size();
  for (auto& p : probs) {
    if (p.size() != C) throw std::invalid_argument("inception_score: ragged distributions");
    double s = 0.0;
    for (double v : p) {
      if (v < 0.0) throw std::invalid_argument("inception_score: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("inception_score: distribution does not sum to one");
    for (double& v : p) v /= s;
  }

  std::vector<double> split_scores;
  for (int s = 0; s < n_splits; ++s) {
    const int lo = static_cast<int>(static_cast<long long>(n) * s / n_splits);
    const int hi = static_cast<int>(static_cast<long long>(n) * (s + 1) / n_splits);
    std::vector<double> marginal(C, 0.0);
    for (int i = lo; i < hi; ++i)
      for (std::size_t c = 0; c < C; ++c) marginal[c] += probs[i][c];
    for (double& m : marginal) m /= static_cast<double>(hi - lo);
    double mean_kl = 0.0;
    for (int i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        if (probs[i][c] > 0.0)
          kl += probs[i][c] * (std::log(clampp(probs[i][c])) - std::log(clampp(marginal[c])));
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(hi - lo);
    split_scores.push_back(std::exp(mean_kl));
  }

  ScoreReport r;
  r.n_images = n;
  r.n_splits = n_splits;
  r.classifier_id = classifier_id;
  double m = 0.0;
  for (double v : split_scores) m += v;
  m /= split_scores.size();
  double var = 0.0;
  for (double v : split_scores) var += (v - m) * (v - m);
  var /= split_scores.size();
  r.mean = m;
  r.std_dev = std::sqrt(var);
  return r;
}

ScoreReport inception_score(const std::vector<colorlab::ImageRGB>& images,
                            const Classifier& classifier, int n_splits) {
  std::vector<std::vector<double>> probs;
  probs.reserve(images.size());
  for (const auto& img : images) probs.push_back(classifier.predict(img));
  return inception_score_from_probs(std::move(probs), n_splits, classifier.id());
}

// ---------------------------------------------------------- ColorStatClassifier

std::vector<double> ColorStatClassifier::features(const colorlab::ImageRGB& img) {
  const colorlab::ImageLab lab = colorlab::rgb_to_lab(img);
  std::vector<double> f(kFeatureDim, 0.0);
  const std::size_t n = lab.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = lab.ab[2 * i], b = lab.ab[2 * i + 1];
    const int ia = std::clamp(static_cast<int>((a + 128.0) / 64.0), 0, 3);
    const int ib = std::clamp(static_cast<int>((b + 128.0) / 64.0), 0, 3);
    f[ia * 4 + ib] += 1.0;
    const int il = std::clamp(static_cast<int>(lab.L[i] / 12.5), 0, 7);
    f[16 + il] += 1.0;
  }
  for (double& v : f) v /= static_cast<double>(n);
  return f;
}

std::vector<double> ColorStatClassifier::predict(const colorlab::ImageRGB& img) const {
  const std::vector<double> f = features(img);
  const int C = n_classes();
  std::vector<double> logits(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double z = bias_[c];
    for (int j = 0; j < kFeatureDim; ++j) z += weight_[c][j] * f[j];
    logits[c] = z;
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& z : logits) {
    z = std::exp(z - zmax);
    denom += z;
  }
  for (double& z : logits) z /= denom;
  return logits;
}

ColorStatClassifier ColorStatClassifier::train(
    const std::vector<colorlab::ImageRGB>& images, const std::vector<int>& labels,
    int n_classes, int iterations, double lr, std::uint64_t seed,
    const std::string& version_tag) {
  if (images.size() != labels.size() || images.empty())
    throw std::invalid_argument("classifier train: bad inputs");
  const int n = static_cast<int>(images.size());
  std::vector<std::vector<double>> feats;
  feats.reserve(n);
  for (const auto& img : images) feats.push_back(features(img));

  ColorStatClassifier m;
  m.weight_.assign(n_classes, std::vector<double>(kFeatureDim, 0.0));
  m.bias_.assign(n_classes, 0.0);
  std::mt19937_64 rng = make_rng(seed, "classifier-init");
  std::normal_distribution<double> dist(0.0, 0.01);
  for (auto& row : m.weight_)
    for (double& w : row) w = dist(rng);

  std::vector<double> p(n_classes);
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> gw(n_classes, std::vector<double>(kFeatureDim, 0.0));
    std::vector<double> gb(n_classes, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < n_classes; ++c) {
        double z = m.bias_[c];
        for (int j = 0; j < kFeatureDim; ++j) z += m.weight_[c][j] * feats[i][j];
        p[c] = z;
      }
      const double zmax = *std::max_element(p.begin(), p.end());
      double denom = 0.0;
      for (double& z : p) {
        z = std::exp(z - zmax);
        denom += z;
      }
      for (double& z : p) z /= denom;
      for (int c = 0; c < n_classes; ++c) {
        const double g = p[c] - (labels[i] == c ? 1.0 : 0.0);
        for (int j = 0; j < kFeatureDim; ++j) gw[c][j] += g * feats[i][j];
        gb[c] += g;
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      for (int j = 0; j < kFeatureDim; ++j) m.weight_[c][j] -= lr * gw[c][j] / n;
      m.bias_[c] -= lr * gb[c] / n;
    }
  }
  m.id_ = "colorstat-" + version_tag;
  return m;
}

std::string ColorStatClassifier::to_json() const {
  json j{{"id", id_}, {"weight", weight_}, {"bias", bias_}, {"feature_dim", kFeatureDim}};
  return j.dump();
}

ColorStatClassifier ColorStatClassifier::from_json(const std::string& text) {
  const json j = json::parse(text);
  ColorStatClassifier m;
  m.id_ = j.at("id").get<std::string>();
  m.weight_ = j.at("weight").get<std::vector<std::vector<double>>>();
  m.bias_ = j.at("bias").get<std::vector<double>>();
  if (j.at("feature_dim").get<int>() != kFeatureDim)
    throw std::invalid_argument("classifier asset: feature dimension mismatch");
  for (const auto& row : m.weight_)
    if (row.size() != kFeatureDim)
      throw std::invalid_argument("classifier asset: ragged weights");
  return m;
}

std::unique_ptr<Classifier> load_classifier(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read classifier asset: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return std::make_unique<ColorStatClassifier>(ColorStatClassifier::from_json(text));
}

// -------------------------------------------------------------------- sample_grid

void sample_grid(const std::vector<colorlab::ImageLab>& inputs,
                 const std::vector<colorlab::ImageLab>& targets,
                 const std::vector<colorlab::ImageLab>& outputs,
                 const std::string& path) {
  if (inputs.size() != targets.size() || targets.size() != outputs.size() || inputs.empty())
    throw std::invalid_argument("sample_grid: lists must be equal-length and nonempty");
  const int H = inputs[0].height, W = inputs[0].width;
  constexpr int kGutter = 2;
  const int rows = static_cast<int>(inputs.size());
  const int grid_w = 3 * W + 2 * kGutter;
  const int grid_h = rows * H + (rows - 1) * kGutter;
  cv::Mat grid(grid_h, grid_w, CV_8UC3, cv::Scalar(255, 255, 255));

  auto blit_rgb = [&](const colorlab::ImageRGB& img, int oy, int ox) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        grid.at<cv::Vec3b>(oy + y, ox + x) =
            cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
  };
  auto gray_of = [](const colorlab::ImageLab& lab) {
    colorlab::ImageLab g = lab;
    if (g.normalized) g = colorlab::denormalize(g);
    std::fill(g.ab.begin(), g.ab.end(), 0.0);
    return colorlab::lab_to_rgb(g);
  };
  auto rgb_of = [](const colorlab::ImageLab& lab) {
    if (lab.normalized) return colorlab::lab_to_rgb(colorlab::denormalize(lab));
    return colorlab::lab_to_rgb(lab);
  };

  for (int r = 0; r < rows; ++r) {
    if (inputs[r].height != H || inputs[r].width != W)
      throw std::invalid_argument("sample_grid: ragged image list");
    const int oy = r * (H + kGutter);
    blit_rgb(gray_of(inputs[r]), oy, 0);
    blit_rgb(rgb_of(targets[r]), oy, W + kGutter);
    blit_rgb(rgb_of(outputs[r]), oy, 2 * (W + kGutter));
  }
  if (!cv::imwrite(path, grid))
    throw std::runtime_error("sample_grid: failed to write " + path);
}

}  // namespace metalgan::evalkit
