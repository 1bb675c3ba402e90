#include "metalgan/toycorpus.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "metalgan/colorlab.hpp"
#include "metalgan/evalkit.hpp"
#include "metalgan/rng.hpp"

namespace fs = std::filesystem;

namespace metalgan::toycorpus {

namespace {

struct Palette {
  double fg_a, fg_b, bg_a, bg_b;
};

// One chroma family per pattern class, kept moderate so Lab stays in gamut.
constexpr Palette kPalettes[kNumClasses] = {
    {45.0, 30.0, 20.0, 12.0},     // reds
    {18.0, 55.0, 8.0, 28.0},      // yellow-orange
    {-48.0, 42.0, -20.0, 18.0},   // greens
    {-35.0, -22.0, -14.0, -8.0},  // cyans
    {5.0, -52.0, 2.0, -20.0},     // blues
    {38.0, -38.0, 16.0, -16.0},   // purples
    {52.0, -6.0, 24.0, -2.0},     // magentas
    {14.0, 30.0, 4.0, 10.0},      // olive-browns
};

double pattern_value(int cls, int x, int y, int res, std::mt19937_64& rng_params,
                     const std::vector<double>& p) {
  (void)rng_params;
  const double fx = static_cast<double>(x) / res;
  const double fy = static_cast<double>(y) / res;
  switch (cls) {
    case 0:  // horizontal stripes
      return std::sin(2.0 * M_PI * p[0] * fy + p[1]) > 0.0 ? 1.0 : 0.0;
    case 1:  // vertical stripes
      return std::sin(2.0 * M_PI * p[0] * fx + p[1]) > 0.0 ? 1.0 : 0.0;
    case 2:  // diagonal stripes
      return std::sin(2.0 * M_PI * p[0] * (fx + fy) + p[1]) > 0.0 ? 1.0 : 0.0;
    case 3: {  // checkerboard
      const int cell = static_cast<int>(p[0]);
      return ((x / cell) + (y / cell)) % 2 ? 1.0 : 0.0;
    }
    case 4: {  // filled disc
      const double dx = fx - p[0], dy = fy - p[1];
      return (dx * dx + dy * dy < p[2] * p[2]) ? 1.0 : 0.0;
    }
    case 5: {  // radial gradient
      const double dx = fx - p[0], dy = fy - p[1];
      return std::min(1.0, std::sqrt(dx * dx + dy * dy) / 0.7);
    }
    case 6:  // opposing quadrants
      return ((fx < p[0]) == (fy < p[1])) ? 1.0 : 0.0;
    default:  // linear ramp
      return std::clamp(p[0] * fx + (1.0 - p[0]) * fy + p[1], 0.0, 1.0);
  }
}

std::vector<double> pattern_params(int cls, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (cls) {
    case 0:
    case 1:
    case 2:
      return {3.0 + 3.0 * u(rng), 2.0 * M_PI * u(rng)};
    case 3:
      return {4.0 + std::floor(5.0 * u(rng))};
    case 4:
      return {0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.18 + 0.18 * u(rng)};
    case 5:
      return {u(rng), u(rng)};
    case 6:
      return {0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng)};
    default:
      return {u(rng), 0.3 * u(rng)};
  }
}

void write_png(const colorlab::ImageRGB& img, const fs::path& path) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
  if (!cv::imwrite(path.string(), m))
    throw std::runtime_error("toy corpus: failed to write " + path.string());
}

}  // namespace

std::map<std::string, int> make_toy_corpus(const std::string& dir, const CorpusSpec& spec) {
  fs::create_directories(dir);
  std::map<std::string, int> labels;
  std::vector<colorlab::ImageRGB> images;
  std::vector<int> label_list;

  for (int i = 0; i < spec.n_images; ++i) {
    const int cls = i % kNumClasses;
    std::mt19937_64 rng = make_rng(spec.seed, "toy-image-" + std::to_string(i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> pp = pattern_params(cls, rng);
    const Palette& pal = kPalettes[cls];
    const double chroma_jit = 0.85 + 0.3 * u(rng);
    const double l_lo = 28.0 + 8.0 * u(rng);
    const double l_hi = 62.0 + 10.0 * u(rng);

    colorlab::ImageLab lab;
    lab.height = spec.resolution;
    lab.width = spec.resolution;
    lab.L.resize(lab.plane_size());
    lab.ab.resize(lab.plane_size() * 2);
    for (int y = 0; y < spec.resolution; ++y)
      for (int x = 0; x < spec.resolution; ++x) {
        const double p = pattern_value(cls, x, y, spec.resolution, rng, pp);
        const std::size_t idx = static_cast<std::size_t>(y) * spec.resolution + x;
        lab.L[idx] = l_lo + (l_hi - l_lo) * p;
        lab.ab[2 * idx] = chroma_jit * (pal.bg_a + (pal.fg_a - pal.bg_a) * p);
        lab.ab[2 * idx + 1] = chroma_jit * (pal.bg_b + (pal.fg_b - pal.bg_b) * p);
      }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d", i);
    colorlab::ImageRGB rgb = colorlab::lab_to_rgb(lab);
    rgb.id = name;
    write_png(rgb, fs::path(dir) / (std::string(name) + ".png"));
    labels[name] = cls;
    images.push_back(std::move(rgb));
    label_list.push_back(cls);
  }

  {
    std::ofstream os(fs::path(dir) / "labels.json");
    os << nlohmann::json(labels).dump(2) << "\n";
  }
  const evalkit::ColorStatClassifier clf = evalkit::ColorStatClassifier::train(
      images, label_list, kNumClasses, 400, 5.0, spec.seed, "toy-v1");
  {
    std::ofstream os(fs::path(dir) / "classifier.json");
    os << clf.to_json() << "\n";
  }
  return labels;
}

}  // namespace metalgan::toycorpus
