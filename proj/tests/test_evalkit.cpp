#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "metalgan/colorlab.hpp"
#include "metalgan/evalkit.hpp"

using namespace metalgan;
using namespace metalgan::evalkit;

namespace {

// Independent from-scratch inception score used as the oracle.
double brute_force_is(const std::vector<std::vector<double>>& probs) {
  const int n = static_cast<int>(probs.size());
  const int c = static_cast<int>(probs[0].size());
  std::vector<double> marginal(c, 0.0);
  for (const auto& p : probs)
    for (int j = 0; j < c; ++j) marginal[j] += p[j] / n;
  double mean_kl = 0.0;
  for (const auto& p : probs) {
    double kl = 0.0;
    for (int j = 0; j < c; ++j) {
      const double pj = std::max(p[j], 1e-12);
      const double qj = std::max(marginal[j], 1e-12);
      kl += pj * std::log(pj / qj);
    }
    mean_kl += kl / n;
  }
  return std::exp(mean_kl);
}

colorlab::ImageRGB flat_rgb(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  colorlab::ImageRGB img = colorlab::make_rgb(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

}  // namespace

TEST_CASE("uniform conditionals score exactly one") {
  std::vector<std::vector<double>> probs(10, std::vector<double>(4, 0.25));
  ScoreReport r = inception_score_from_probs(probs, 2, "test");
  CHECK(std::fabs(r.mean - 1.0) < 1e-12);
  CHECK(std::fabs(r.std_dev) < 1e-12);
  CHECK(r.n_images == 10);
  CHECK(r.n_splits == 2);
  CHECK(r.classifier_id == "test");
}

TEST_CASE("balanced one-hot conditionals score the class count") {
  const int n_classes = 5;
  std::vector<std::vector<double>> probs;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> p(n_classes, 0.0);
    p[i % n_classes] = 1.0;
    probs.push_back(p);
  }
  ScoreReport r = inception_score_from_probs(probs, 1, "test");
  CHECK(std::fabs(r.mean - n_classes) < 1e-9);
}

TEST_CASE("random fixture matches the brute-force KL oracle") {
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> ud(0.01, 1.0);
  std::vector<std::vector<double>> probs;
  for (int i = 0; i < 30; ++i) {
    std::vector<double> p(6);
    double s = 0.0;
    for (double& v : p) s += (v = ud(rng));
    for (double& v : p) v /= s;
    probs.push_back(p);
  }

  ScoreReport r1 = inception_score_from_probs(probs, 1, "test");
  CHECK(std::fabs(r1.mean - brute_force_is(probs)) < 1e-9);
  CHECK(std::fabs(r1.std_dev) < 1e-12);

  // split case: mean/std across contiguous halves, each scored independently
  ScoreReport r2 = inception_score_from_probs(probs, 2, "test");
  const double a = brute_force_is({probs.begin(), probs.begin() + 15});
  const double b = brute_force_is({probs.begin() + 15, probs.end()});
  const double mean = (a + b) / 2.0;
  const double sd = std::sqrt(((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2.0);
  CHECK(std::fabs(r2.mean - mean) < 1e-9);
  CHECK(std::fabs(r2.std_dev - sd) < 1e-9);
}

TEST_CASE("score is invariant to class relabeling and image order within a split") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  std::vector<std::vector<double>> probs;
  for (int i = 0; i < 16; ++i) {
    std::vector<double> p(4);
    double s = 0.0;
    for (double& v : p) s += (v = ud(rng));
    for (double& v : p) v /= s;
    probs.push_back(p);
  }
  const double base = inception_score_from_probs(probs, 1, "t").mean;

  std::vector<std::vector<double>> shuffled = probs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::fabs(inception_score_from_probs(shuffled, 1, "t").mean - base) < 1e-9);

  std::vector<std::vector<double>> relabeled;
  for (const auto& p : probs) relabeled.push_back({p[2], p[0], p[3], p[1]});
  CHECK(std::fabs(inception_score_from_probs(relabeled, 1, "t").mean - base) < 1e-9);
}

TEST_CASE("row normalization guard") {
  std::vector<std::vector<double>> near(4, std::vector<double>(2, 0.5));
  near[0] = {0.5 + 4e-7, 0.5};  // within the 1e-6 renormalization window
  CHECK_NOTHROW(inception_score_from_probs(near, 1, "t"));

  std::vector<std::vector<double>> off(4, std::vector<double>(2, 0.5));
  off[1] = {0.7, 0.5};
  CHECK_THROWS(inception_score_from_probs(off, 1, "t"));

  CHECK_THROWS(inception_score_from_probs({}, 1, "t"));
  std::vector<std::vector<double>> ok(3, std::vector<double>(2, 0.5));
  CHECK_THROWS(inception_score_from_probs(ok, 0, "t"));
  CHECK_THROWS(inception_score_from_probs(ok, 4, "t"));  // more splits than images
}

TEST_CASE("color statistics classifier learns separable flat-color classes") {
  std::vector<colorlab::ImageRGB> images;
  std::vector<int> labels;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> jitter(-12, 12);
  const int base[3][3] = {{200, 40, 40}, {40, 200, 40}, {40, 80, 220}};
  for (int i = 0; i < 60; ++i) {
    const int c = i % 3;
    auto clamp8 = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
    images.push_back(flat_rgb(8, 8, clamp8(base[c][0] + jitter(rng)),
                              clamp8(base[c][1] + jitter(rng)),
                              clamp8(base[c][2] + jitter(rng))));
    labels.push_back(c);
  }

  ColorStatClassifier clf =
      ColorStatClassifier::train(images, labels, 3, 300, 2.0, 42, "unit-v1");
  CHECK(clf.n_classes() == 3);
  CHECK(clf.id().find("unit-v1") != std::string::npos);

  int correct = 0;
  for (int i = 0; i < 60; ++i) {
    std::vector<double> p = clf.predict(images[i]);
    REQUIRE(static_cast<int>(p.size()) == 3);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-9);
    if (std::max_element(p.begin(), p.end()) - p.begin() == labels[i]) ++correct;
  }
  CHECK(correct == 60);

  // JSON persistence round trip preserves predictions bitwise
  ColorStatClassifier back = ColorStatClassifier::from_json(clf.to_json());
  for (int i = 0; i < 5; ++i) CHECK(back.predict(images[i]) == clf.predict(images[i]));

  const std::string path =
      (std::filesystem::temp_directory_path() / "metalgan_clf_test.json").string();
  std::ofstream(path) << clf.to_json();
  auto loaded = load_classifier(path);
  CHECK(loaded->n_classes() == 3);
  CHECK(loaded->predict(images[0]) == clf.predict(images[0]));
  std::filesystem::remove(path);
}

TEST_CASE("inception_score over images wires the classifier through") {
  std::vector<colorlab::ImageRGB> images;
  for (int i = 0; i < 12; ++i)
    images.push_back(flat_rgb(8, 8, i % 2 ? 220 : 30, 60, i % 2 ? 30 : 220));
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 2);
  ColorStatClassifier clf = ColorStatClassifier::train(images, labels, 2, 200, 2.0, 1, "w");

  ScoreReport r = inception_score(images, clf, 2);
  CHECK(r.n_images == 12);
  CHECK(r.mean > 1.0);
  CHECK(r.mean <= 2.0 + 1e-9);
  CHECK(r.classifier_id == clf.id());

  std::vector<std::vector<double>> probs;
  for (const auto& img : images) probs.push_back(clf.predict(img));
  ScoreReport r2 = inception_score_from_probs(probs, 2, clf.id());
  CHECK(std::fabs(r.mean - r2.mean) < 1e-12);
}

TEST_CASE("sample grid layout and determinism") {
  const int H = 32, W = 32;
  std::vector<colorlab::ImageLab> inputs, targets, outputs;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> px(0, 255);
  for (int i = 0; i < 2; ++i) {
    colorlab::ImageRGB img = colorlab::make_rgb(H, W);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(px(rng));
    colorlab::ImageLab lab = colorlab::rgb_to_lab(img);
    inputs.push_back(lab);
    targets.push_back(lab);
    colorlab::ImageLab out = lab;
    for (auto& v : out.ab) v *= 0.5;
    outputs.push_back(out);
  }

  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "metalgan_grid_1.png").string();
  const std::string p2 = (dir / "metalgan_grid_2.png").string();
  sample_grid(inputs, targets, outputs, p1);
  sample_grid(inputs, targets, outputs, p2);

  cv::Mat m = cv::imread(p1, cv::IMREAD_COLOR);
  REQUIRE(!m.empty());
  CHECK(m.cols == 3 * W + 4);        // three columns, two 2-px gutters
  CHECK(m.rows == 2 * H + 2);        // two rows, one 2-px gutter

  // first column renders the grayscale input: equal BGR channels
  for (int y = 0; y < H; y += 5)
    for (int x = 0; x < W; x += 5) {
      const cv::Vec3b v = m.at<cv::Vec3b>(y, x);
      CHECK(std::abs(int(v[0]) - int(v[1])) <= 1);
      CHECK(std::abs(int(v[1]) - int(v[2])) <= 1);
    }

  // byte-identical re-render
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  std::filesystem::remove(p1);
  std::filesystem::remove(p2);

  CHECK_THROWS(sample_grid({}, {}, {}, (dir / "x.png").string()));
  CHECK_THROWS(sample_grid(inputs, targets, {outputs[0]}, (dir / "x.png").string()));
}

TEST_CASE("score report serializes its fields") {
  ScoreReport r;
  r.mean = 2.5;
  r.std_dev = 0.125;
  r.n_images = 7;
  r.n_splits = 3;
  r.classifier_id = "abc";
  const std::string j = r.to_json();
  CHECK(j.find("2.5") != std::string::npos);
  CHECK(j.find("0.125") != std::string::npos);
  CHECK(j.find("abc") != std::string::npos);
  CHECK(j.find("n_splits") != std::string::npos);
}
