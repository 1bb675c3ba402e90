#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace metalgan::toycorpus {

inline constexpr int kNumClasses = 8;

struct CorpusSpec {
  int n_images = 500;
  int resolution = 32;
  std::uint64_t seed = 17;
};

// Procedural colorization corpus: eight pattern families, each with a fixed
// color palette, so chroma is predictable from the lightness structure.
// Writes PNGs plus labels.json and a trained classifier.json into `dir`;
// returns image id -> class label.
std::map<std::string, int> make_toy_corpus(const std::string& dir, const CorpusSpec& spec);

}  // namespace metalgan::toycorpus
