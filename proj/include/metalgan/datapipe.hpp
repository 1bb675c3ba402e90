#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metalgan/colorlab.hpp"
#include "metalgan/taskforge.hpp"
#include "metalgan/tensor.hpp"

namespace metalgan::datapipe {

enum class Split { kTrain, kTest };

struct DatasetEntry {
  std::string image_id;  // file stem, unique
  std::string path;
  int width = 0;
  int height = 0;
};

struct DatasetIndex {
  std::string root;
  std::vector<DatasetEntry> entries;  // path-sorted
  std::map<std::string, Split> split;
  int skipped = 0;  // unreadable files at ingest

  const DatasetEntry& entry(const std::string& image_id) const;
  std::vector<std::string> ids(std::optional<Split> which = std::nullopt) const;
};

// Scans a directory of PNG/JPEG files; corrupt files are skipped and counted.
DatasetIndex ingest(const std::string& dir);

// Deterministic disjoint train/test split of an ingested index.
DatasetIndex split(const DatasetIndex& index, double test_fraction, std::uint64_t seed);

// Decoded, resized, normalized Lab images; cached because the training loop
// revisits the same files thousands of times.
class ImageLoader {
 public:
  ImageLoader(const DatasetIndex& index, int resolution);

  const colorlab::ImageLab& normalized_lab(const std::string& image_id) const;
  colorlab::ImageRGB rgb(const std::string& image_id) const;  // resized, uncached
  int resolution() const { return resolution_; }

 private:
  const DatasetIndex* index_;
  int resolution_;
  mutable std::map<std::string, colorlab::ImageLab> cache_;
};

// One training pair: normalized L plane and normalized ab planes.
struct LabBatch {
  Tensor l;   // (B,1,H,W)
  Tensor ab;  // (B,2,H,W)
  std::vector<std::string> ids;
};

// Uniform sampling with replacement from a task's members (train split only).
LabBatch load_batch(const taskforge::TaskCluster& task, const DatasetIndex& index,
                    const ImageLoader& loader, int batch_size, std::mt19937_64& rng);

// Fixed list of ids as one batch (evaluation paths).
LabBatch load_ids(const std::vector<std::string>& ids, const ImageLoader& loader);

}  // namespace metalgan::datapipe
