#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metalgan/colorlab.hpp"

namespace metalgan::evalkit {

struct ScoreReport {
  double mean = 1.0;
  double std_dev = 0.0;
  int n_images = 0;
  int n_splits = 0;
  std::string classifier_id;

  std::string to_json() const;
};

// Frozen label-distribution model; returns p(y|x) for an RGB image.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<double> predict(const colorlab::ImageRGB& img) const = 0;
  virtual int n_classes() const = 0;
  virtual std::string id() const = 0;
};

// exp of the mean KL between per-image conditionals and the split marginal,
// reported as mean/std across contiguous splits.
ScoreReport inception_score(const std::vector<colorlab::ImageRGB>& images,
                            const Classifier& classifier, int n_splits);

// Same computation on precomputed class distributions; rows are renormalized
// when within 1e-6 of summing to one, rejected otherwise.
ScoreReport inception_score_from_probs(std::vector<std::vector<double>> probs,
                                       int n_splits, const std::string& classifier_id);

// Softmax regression over Lab color-statistics features, trained once on the
// toy corpus and persisted as a versioned JSON asset.
class ColorStatClassifier : public Classifier {
 public:
  std::vector<double> predict(const colorlab::ImageRGB& img) const override;
  int n_classes() const override { return static_cast<int>(bias_.size()); }
  std::string id() const override { return id_; }

  std::string to_json() const;
  static ColorStatClassifier from_json(const std::string& text);
  static std::vector<double> features(const colorlab::ImageRGB& img);
  static constexpr int kFeatureDim = 24;  // 4x4 ab histogram + 8-bin L histogram

  // Full-batch gradient descent on cross-entropy.
  static ColorStatClassifier train(const std::vector<colorlab::ImageRGB>& images,
                                   const std::vector<int>& labels, int n_classes,
                                   int iterations, double lr, std::uint64_t seed,
                                   const std::string& version_tag);

 private:
  std::vector<std::vector<double>> weight_;  // n_classes x kFeatureDim
  std::vector<double> bias_;
  std::string id_;
};

std::unique_ptr<Classifier> load_classifier(const std::string& path);

// PNG grid of (grayscale input, ground truth, output) triplets with 2-pixel
// gutters; all images unnormalized Lab at a common resolution.
void sample_grid(const std::vector<colorlab::ImageLab>& inputs,
                 const std::vector<colorlab::ImageLab>& targets,
                 const std::vector<colorlab::ImageLab>& outputs,
                 const std::string& path);

}  // namespace metalgan::evalkit
