#include "metalgan/taskforge.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "metalgan/rng.hpp"

namespace metalgan::taskforge {

namespace {

constexpr double kDegenerateNorm = 1e-12;

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Plain bilinear resample of an 8-bit RGB image, used to fit the backbone's
// fixed input resolution without pulling image libraries into this module.
colorlab::ImageRGB resize_rgb(const colorlab::ImageRGB& img, int res) {
  if (img.height == res && img.width == res) return img;
  colorlab::ImageRGB out = colorlab::make_rgb(res, res, img.id);
  const double sy = static_cast<double>(img.height) / res;
  const double sx = static_cast<double>(img.width) / res;
  for (int y = 0; y < res; ++y) {
    const double fy = std::min((y + 0.5) * sy - 0.5, img.height - 1.0);
    const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
    const int y1 = std::min(img.height - 1, y0 + 1);
    const double wy = std::max(0.0, fy - y0);
    for (int x = 0; x < res; ++x) {
      const double fx = std::min((x + 0.5) * sx - 0.5, img.width - 1.0);
      const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
      const int x1 = std::min(img.width - 1, x0 + 1);
      const double wx = std::max(0.0, fx - x0);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                         wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

class DeskBackbone : public FeatureBackbone {
 public:
  explicit DeskBackbone(const DeskBackboneConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng = make_rng(cfg.seed, "backbone-init");
    std::normal_distribution<double> dist;
    for (int i = 0; i < cfg.n_blocks; ++i) {
      const int cin = (i == 0) ? 3 : (cfg.base_width << (i - 1));
      const int cout = cfg.base_width << i;
      auto conv = std::make_unique<netcore::Conv2d>(cin, cout, 3, 2, 1);
      const double stddev = std::sqrt(2.0 / (cin * 9.0));
      for (double& w : conv->weight()) w = stddev * dist(rng);
      conv_.push_back(std::move(conv));
    }
  }

  FeatureMap extract(const colorlab::ImageRGB& img) const override {
    colorlab::validate(img);
    const colorlab::ImageRGB r = resize_rgb(img, cfg_.input_resolution);
    Tensor x({1, 3, cfg_.input_resolution, cfg_.input_resolution});
    for (int y = 0; y < r.height; ++y)
      for (int xx = 0; xx < r.width; ++xx)
        for (int c = 0; c < 3; ++c)
          x.at(0, c, y, xx) = r.at(y, xx, c) / 255.0;
    for (auto& conv : conv_) {
      x = conv->forward(x, false);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < 0.0) x[i] = 0.0;
    }
    return FeatureMap{std::move(x)};
  }

  int out_channels() const override {
    return cfg_.base_width << (cfg_.n_blocks - 1);
  }
  int input_resolution() const override { return cfg_.input_resolution; }
  std::string id() const override {
    return "desk-conv-b" + std::to_string(cfg_.n_blocks) + "-w" +
           std::to_string(cfg_.base_width) + "-s" + std::to_string(cfg_.seed);
  }

 private:
  DeskBackboneConfig cfg_;
  mutable std::vector<std::unique_ptr<netcore::Conv2d>> conv_;
};

}  // namespace

std::unique_ptr<FeatureBackbone> make_desk_backbone(const DeskBackboneConfig& cfg) {
  return std::make_unique<DeskBackbone>(cfg);
}

FeatureMap extract_features(const colorlab::ImageRGB& img, const FeatureBackbone& backbone) {
  return backbone.extract(img);
}

Descriptor mac_descriptor(const FeatureMap& fm, const std::string& image_id) {
  const Tensor& v = fm.values;
  const int C = v.dim(1), h = v.dim(2), w = v.dim(3);
  Descriptor d;
  d.image_id = image_id;
  d.vector.resize(C);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < C; ++c) {
    const double* p = v.data() + static_cast<std::size_t>(c) * plane;
    double m = p[0];
    for (std::size_t i = 1; i < plane; ++i) m = std::max(m, p[i]);
    if (!std::isfinite(m)) throw std::invalid_argument("mac_descriptor: non-finite feature");
    d.vector[c] = m;
  }
  double norm = 0.0;
  for (double x : d.vector) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < kDegenerateNorm) {
    d.degenerate = true;
    return d;
  }
  for (double& x : d.vector) x /= norm;
  return d;
}

PcaProjection fit_pca(const std::vector<std::vector<double>>& raw, int out_dim) {
  if (raw.empty()) throw std::invalid_argument("fit_pca: no samples");
  const int dim = static_cast<int>(raw[0].size());
  if (out_dim <= 0 || out_dim > dim)
    throw std::invalid_argument("fit_pca: out_dim must be in [1, input dim]");
  if (static_cast<int>(raw.size()) < out_dim + 1)
    throw std::invalid_argument("fit_pca: need at least out_dim + 1 samples");

  const int n = static_cast<int>(raw.size());
  Eigen::MatrixXd X(n, dim);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(raw[i].size()) != dim)
      throw std::invalid_argument("fit_pca: ragged input");
    for (int j = 0; j < dim; ++j) X(i, j) = raw[i][j];
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("fit_pca: eigendecomposition failed");

  PcaProjection p;
  p.mean.assign(mean.data(), mean.data() + dim);
  p.basis.resize(out_dim);
  p.explained_variance.resize(out_dim);
  // Eigen returns ascending eigenvalues; take the top out_dim, descending.
  for (int r = 0; r < out_dim; ++r) {
    const int src = dim - 1 - r;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    // Deterministic sign: largest-magnitude component made positive.
    int arg = 0;
    for (int j = 1; j < dim; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0.0) v = -v;
    p.basis[r].assign(v.data(), v.data() + dim);
    p.explained_variance[r] = std::max(0.0, es.eigenvalues()[src]);
  }
  return p;
}

Descriptor project(const PcaProjection& p, const std::vector<double>& raw,
                   const std::string& image_id) {
  if (static_cast<int>(raw.size()) != p.in_dim())
    throw std::invalid_argument("project: dimension mismatch");
  Descriptor d;
  d.image_id = image_id;
  d.vector.resize(p.out_dim());
  for (int r = 0; r < p.out_dim(); ++r) {
    double acc = 0.0;
    for (int j = 0; j < p.in_dim(); ++j)
      acc += p.basis[r][j] * (raw[j] - p.mean[j]);
    d.vector[r] = acc;
  }
  double norm = 0.0;
  for (double x : d.vector) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < kDegenerateNorm) {
    std::fill(d.vector.begin(), d.vector.end(), 0.0);
    d.degenerate = true;
    return d;
  }
  for (double& x : d.vector) x /= norm;
  return d;
}

KMeansResult kmeans(const std::vector<Descriptor>& descriptors, int k,
                    std::uint64_t seed, int max_iter) {
  std::vector<const Descriptor*> pts;
  for (const Descriptor& d : descriptors)
    if (!d.degenerate) pts.push_back(&d);
  const int n = static_cast<int>(pts.size());
  if (k <= 0) throw std::invalid_argument("kmeans: k must be positive");
  if (n < k) throw std::invalid_argument("kmeans: fewer descriptors than k");
  const int dim = static_cast<int>(pts[0]->vector.size());

  std::mt19937_64 rng = make_rng(seed, "kmeans-seeding");
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);

  // k-means++ style seeding: first uniform, then distance-squared weighted.
  {
    std::uniform_int_distribution<int> first(0, n - 1);
    centroids.push_back(pts[first(rng)]->vector);
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        for (const auto& ctr : centroids)
          best = std::min(best, sq_dist(pts[i]->vector, ctr));
        d2[i] = best;
        total += best;
      }
      int pick = n - 1;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += d2[i];
          if (r <= acc) {
            pick = i;
            break;
          }
        }
      } else {
        std::uniform_int_distribution<int> any(0, n - 1);
        pick = any(rng);
      }
      centroids.push_back(pts[pick]->vector);
    }
  }

  KMeansResult res;
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(pts[i]->vector, centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(pts[i]->vector, centroids[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      inertia += bd;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    res.inertia_trace.push_back(inertia);
    if (!changed && iter > 0) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dim; ++j) sums[assign[i]][j] += pts[i]->vector[j];
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (int j = 0; j < dim; ++j) centroids[c][j] = sums[c][j] / counts[c];
    }
    // Empty-cluster repair: hand the point farthest from its centroid over.
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int far_i = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (counts[assign[i]] <= 1) continue;
        const double d = sq_dist(pts[i]->vector, centroids[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      if (far_i < 0) throw std::runtime_error("kmeans: cannot repair empty cluster");
      counts[assign[far_i]]--;
      assign[far_i] = c;
      counts[c] = 1;
      centroids[c] = pts[far_i]->vector;
    }
  }

  res.clusters.resize(k);
  for (int c = 0; c < k; ++c) {
    res.clusters[c].cluster_id = c;
    res.clusters[c].centroid = centroids[c];
  }
  for (int i = 0; i < n; ++i)
    res.clusters[assign[i]].member_ids.push_back(pts[i]->image_id);
  for (const TaskCluster& tc : res.clusters)
    if (tc.member_ids.empty())
      throw std::runtime_error("kmeans: empty cluster after repair");
  return res;
}

const TaskCluster& retrieve_cluster(const Descriptor& q,
                                    const std::vector<TaskCluster>& clusters) {
  if (clusters.empty()) throw std::invalid_argument("retrieve_cluster: no clusters");
  if (q.degenerate)
    throw std::invalid_argument("retrieve_cluster: degenerate query descriptor");
  const TaskCluster* best = &clusters[0];
  double bd = sq_dist(q.vector, clusters[0].centroid);
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    const double d = sq_dist(q.vector, clusters[c].centroid);
    if (d < bd || (d == bd && clusters[c].cluster_id < best->cluster_id)) {
      bd = d;
      best = &clusters[c];
    }
  }
  return *best;
}

std::string cluster_file_to_json(const ClusterFile& cf) {
  nlohmann::json j;
  j["k"] = cf.k;
  j["seed"] = cf.seed;
  j["pca_dim"] = cf.pca_dim;
  j["assignments"] = cf.assignments;
  j["centroids"] = cf.centroids;
  return j.dump(2);
}

ClusterFile cluster_file_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  ClusterFile cf;
  cf.k = j.at("k").get<int>();
  cf.seed = j.at("seed").get<std::uint64_t>();
  cf.pca_dim = j.at("pca_dim").get<int>();
  cf.assignments = j.at("assignments").get<std::map<std::string, int>>();
  cf.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  return cf;
}

std::vector<TaskCluster> clusters_from_file(const ClusterFile& cf) {
  std::vector<TaskCluster> clusters(cf.k);
  for (int c = 0; c < cf.k; ++c) {
    clusters[c].cluster_id = c;
    if (c < static_cast<int>(cf.centroids.size()))
      clusters[c].centroid = cf.centroids[c];
  }
  for (const auto& [id, cid] : cf.assignments) {
    if (cid < 0 || cid >= cf.k)
      throw std::invalid_argument("cluster file: assignment out of range");
    clusters[cid].member_ids.push_back(id);
  }
  return clusters;
}

}  // namespace metalgan::taskforge
