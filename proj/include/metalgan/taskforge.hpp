#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "metalgan/colorlab.hpp"
#include "metalgan/netcore.hpp"
#include "metalgan/tensor.hpp"

namespace metalgan::taskforge {

// (C, h, w) activation tensor from a frozen convolutional backbone.
struct FeatureMap {
  Tensor values;  // rank 3 stored as (1, C, h, w)
  int channels() const { return values.dim(1); }
};

struct Descriptor {
  std::vector<double> vector;
  std::string image_id;
  bool degenerate = false;  // all-zero feature map; excluded from clustering
};

struct PcaProjection {
  std::vector<double> mean;               // input dim
  std::vector<std::vector<double>> basis;  // out_dim rows, orthonormal
  std::vector<double> explained_variance;  // descending
  int in_dim() const { return static_cast<int>(mean.size()); }
  int out_dim() const { return static_cast<int>(basis.size()); }
};

struct TaskCluster {
  int cluster_id = 0;
  std::vector<std::string> member_ids;
  std::vector<double> centroid;
};

// Frozen feature extractor interface; the desk-scale default is a small
// seeded convolutional stack, but any extractor with a fixed channel count
// can be plugged in.
class FeatureBackbone {
 public:
  virtual ~FeatureBackbone() = default;
  virtual FeatureMap extract(const colorlab::ImageRGB& img) const = 0;
  virtual int out_channels() const = 0;
  virtual int input_resolution() const = 0;
  virtual std::string id() const = 0;
};

struct DeskBackboneConfig {
  int input_resolution = 32;
  int n_blocks = 3;
  int base_width = 8;  // out channels = base_width << (n_blocks - 1)
  std::uint64_t seed = 7;
};

std::unique_ptr<FeatureBackbone> make_desk_backbone(const DeskBackboneConfig& cfg);

FeatureMap extract_features(const colorlab::ImageRGB& img, const FeatureBackbone& backbone);

// Per-channel spatial max followed by L2 normalization; an all-zero map
// yields a zero vector flagged degenerate.
Descriptor mac_descriptor(const FeatureMap& fm, const std::string& image_id = {});

// Mean-centered projection onto the top principal directions, no whitening.
PcaProjection fit_pca(const std::vector<std::vector<double>>& raw, int out_dim);

// Center, project, re-normalize to unit length.
Descriptor project(const PcaProjection& p, const std::vector<double>& raw,
                   const std::string& image_id = {});

struct KMeansResult {
  std::vector<TaskCluster> clusters;
  std::vector<double> inertia_trace;  // within-cluster SSE per Lloyd iteration
};

// Lloyd's algorithm with distance-weighted greedy seeding and empty-cluster
// repair; deterministic for a given seed. Degenerate descriptors are rejected.
KMeansResult kmeans(const std::vector<Descriptor>& descriptors, int k,
                    std::uint64_t seed, int max_iter = 100);

// Nearest centroid by Euclidean distance, ties to the lowest cluster_id.
const TaskCluster& retrieve_cluster(const Descriptor& q,
                                    const std::vector<TaskCluster>& clusters);

// Cluster assignment document; `cluster` writes it, `train` consumes it.
struct ClusterFile {
  int k = 0;
  std::uint64_t seed = 0;
  int pca_dim = 0;
  std::map<std::string, int> assignments;
  std::vector<std::vector<double>> centroids;
};

std::string cluster_file_to_json(const ClusterFile& cf);
ClusterFile cluster_file_from_json(const std::string& json_text);
std::vector<TaskCluster> clusters_from_file(const ClusterFile& cf);

}  // namespace metalgan::taskforge
