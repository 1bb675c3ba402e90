#include "metalgan/datapipe.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "metalgan/rng.hpp"

namespace fs = std::filesystem;

namespace metalgan::datapipe {

namespace {

bool has_image_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

colorlab::ImageRGB mat_to_rgb(const cv::Mat& bgr, const std::string& id) {
  colorlab::ImageRGB img = colorlab::make_rgb(bgr.rows, bgr.cols, id);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
      img.at(y, x, 0) = px[2];
      img.at(y, x, 1) = px[1];
      img.at(y, x, 2) = px[0];
    }
  return img;
}

}  // namespace

const DatasetEntry& DatasetIndex::entry(const std::string& image_id) const {
  for (const DatasetEntry& e : entries)
    if (e.image_id == image_id) return e;
  throw std::invalid_argument("DatasetIndex: unknown image id " + image_id);
}

std::vector<std::string> DatasetIndex::ids(std::optional<Split> which) const {
  std::vector<std::string> out;
  for (const DatasetEntry& e : entries) {
    if (which) {
      auto it = split.find(e.image_id);
      if (it == split.end() || it->second != *which) continue;
    }
    out.push_back(e.image_id);
  }
  return out;
}

DatasetIndex ingest(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::invalid_argument("ingest: not a directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && has_image_ext(e.path())) paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw std::invalid_argument("ingest: no images in " + dir);

  DatasetIndex idx;
  idx.root = dir;
  for (const fs::path& p : paths) {
    cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (m.empty() || m.rows < 8 || m.cols < 8) {
      std::cerr << "ingest: skipping unreadable file " << p << "\n";
      idx.skipped++;
      continue;
    }
    DatasetEntry e;
    e.image_id = p.stem().string();
    e.path = p.string();
    e.width = m.cols;
    e.height = m.rows;
    idx.entries.push_back(std::move(e));
  }
  if (idx.entries.empty()) throw std::runtime_error("ingest: no readable images");
  for (std::size_t i = 1; i < idx.entries.size(); ++i)
    if (idx.entries[i].image_id == idx.entries[i - 1].image_id)
      throw std::runtime_error("ingest: duplicate image id " + idx.entries[i].image_id);
  return idx;
}

DatasetIndex split(const DatasetIndex& index, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must be in (0,1)");
  DatasetIndex out = index;
  const int n = static_cast<int>(out.entries.size());
  const int n_test = std::max(1, static_cast<int>(std::lround(n * test_fraction)));
  if (n_test >= n) throw std::invalid_argument("split: dataset too small for fraction");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = make_rng(seed, "split");
  // Fisher-Yates, explicit so the permutation is stable across library versions.
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> u(0, i);
    std::swap(order[i], order[u(rng)]);
  }
  out.split.clear();
  for (int i = 0; i < n; ++i)
    out.split[out.entries[order[i]].image_id] = (i < n_test) ? Split::kTest : Split::kTrain;
  return out;
}

ImageLoader::ImageLoader(const DatasetIndex& index, int resolution)
    : index_(&index), resolution_(resolution) {
  if (resolution < 8) throw std::invalid_argument("ImageLoader: resolution >= 8");
}

colorlab::ImageRGB ImageLoader::rgb(const std::string& image_id) const {
  const DatasetEntry& e = index_->entry(image_id);
  cv::Mat m = cv::imread(e.path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("ImageLoader: unreadable file " + e.path);
  if (m.rows != resolution_ || m.cols != resolution_) {
    cv::Mat r;
    cv::resize(m, r, cv::Size(resolution_, resolution_), 0, 0, cv::INTER_LINEAR);
    m = r;
  }
  return mat_to_rgb(m, image_id);
}

const colorlab::ImageLab& ImageLoader::normalized_lab(const std::string& image_id) const {
  auto it = cache_.find(image_id);
  if (it != cache_.end()) return it->second;
  colorlab::ImageLab lab = colorlab::normalize(colorlab::rgb_to_lab(rgb(image_id)));
  return cache_.emplace(image_id, std::move(lab)).first->second;
}

LabBatch load_batch(const taskforge::TaskCluster& task, const DatasetIndex& index,
                    const ImageLoader& loader, int batch_size, std::mt19937_64& rng) {
  if (task.member_ids.empty()) throw std::invalid_argument("load_batch: empty task");
  if (batch_size < 1) throw std::invalid_argument("load_batch: batch_size >= 1");
  for (const std::string& id : task.member_ids) {
    auto it = index.split.find(id);
    if (it != index.split.end() && it->second == Split::kTest)
      throw std::invalid_argument("load_batch: test image in task: " + id);
  }
  std::vector<std::string> ids;
  std::uniform_int_distribution<std::size_t> u(0, task.member_ids.size() - 1);
  for (int i = 0; i < batch_size; ++i) ids.push_back(task.member_ids[u(rng)]);
  return load_ids(ids, loader);
}

LabBatch load_ids(const std::vector<std::string>& ids, const ImageLoader& loader) {
  if (ids.empty()) throw std::invalid_argument("load_ids: empty id list");
  std::vector<const colorlab::ImageLab*> imgs;
  imgs.reserve(ids.size());
  for (const std::string& id : ids) imgs.push_back(&loader.normalized_lab(id));
  LabBatch b;
  b.l = colorlab::l_plane_batch(imgs);
  b.ab = colorlab::ab_plane_batch(imgs);
  b.ids = ids;
  return b;
}

}  // namespace metalgan::datapipe
