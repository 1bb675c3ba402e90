#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "metalgan/colorlab.hpp"
#include "metalgan/taskforge.hpp"

using namespace metalgan;
using namespace metalgan::taskforge;

namespace {

FeatureMap make_fm(int c, int h, int w) {
  FeatureMap fm;
  fm.values = Tensor({1, c, h, w});
  return fm;
}

colorlab::ImageRGB random_rgb(int h, int w, unsigned seed) {
  colorlab::ImageRGB img = colorlab::make_rgb(h, w, "t");
  unsigned s = seed;
  for (auto& px : img.pixels) {
    s = s * 1664525u + 1013904223u;
    px = static_cast<std::uint8_t>(s >> 24);
  }
  return img;
}

Descriptor desc(std::vector<double> v, std::string id = {}) {
  Descriptor d;
  d.vector = std::move(v);
  d.image_id = std::move(id);
  return d;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix; serves as the
// brute-force oracle, fully independent of the library's PCA path.
void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& evals,
                  std::vector<std::vector<double>>& evecs) {
  const int n = static_cast<int>(a.size());
  evecs.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) evecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-18) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = evecs[i][p], viq = evecs[i][q];
          evecs[i][p] = c * vip - s * viq;
          evecs[i][q] = s * vip + c * viq;
        }
      }
  }
  evals.resize(n);
  for (int i = 0; i < n; ++i) evals[i] = a[i][i];
}

}  // namespace

// ------------------------------------------------------------------ backbone

TEST_CASE("desk backbone is frozen, deterministic and shape-stable") {
  DeskBackboneConfig cfg;
  cfg.input_resolution = 16;
  cfg.n_blocks = 3;
  cfg.base_width = 8;
  auto bb = make_desk_backbone(cfg);
  CHECK(bb->out_channels() == 32);  // base_width << (n_blocks - 1)
  CHECK(bb->input_resolution() == 16);

  colorlab::ImageRGB img = random_rgb(8, 8, 1);  // resized internally
  FeatureMap a = extract_features(img, *bb);
  FeatureMap b = extract_features(img, *bb);
  CHECK(a.channels() == 32);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);

  auto bb2 = make_desk_backbone(cfg);
  FeatureMap c = extract_features(img, *bb2);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == c.values[i]);
}

// ----------------------------------------------------------------------- MAC

TEST_CASE("mac descriptor arithmetic") {
  FeatureMap fm = make_fm(1, 2, 2);
  for (std::size_t i = 0; i < fm.values.size(); ++i) fm.values[i] = 5.0;
  Descriptor d = mac_descriptor(fm);
  REQUIRE(d.vector.size() == 1);
  CHECK(d.vector[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_FALSE(d.degenerate);

  FeatureMap fm2 = make_fm(2, 2, 2);
  fm2.values.at(0, 0, 1, 0) = 3.0;
  fm2.values.at(0, 1, 0, 1) = 4.0;
  Descriptor d2 = mac_descriptor(fm2);
  CHECK(d2.vector[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(d2.vector[1] == doctest::Approx(0.8).epsilon(1e-15));

  Descriptor dz = mac_descriptor(make_fm(3, 2, 2));
  CHECK(dz.degenerate);
  for (double v : dz.vector) CHECK(v == 0.0);
}

TEST_CASE("mac descriptor has unit norm and permutation structure") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(0.0, 2.0);
  FeatureMap fm = make_fm(5, 3, 4);
  for (std::size_t i = 0; i < fm.values.size(); ++i) fm.values[i] = ud(rng);

  Descriptor d = mac_descriptor(fm);
  double norm = 0.0;
  for (double v : d.vector) norm += v * v;
  CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-6);

  // channel permutation permutes the descriptor identically
  FeatureMap perm = make_fm(5, 3, 4);
  const int order[5] = {3, 0, 4, 1, 2};
  for (int c = 0; c < 5; ++c)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) perm.values.at(0, c, h, w) = fm.values.at(0, order[c], h, w);
  Descriptor dp = mac_descriptor(perm);
  for (int c = 0; c < 5; ++c)
    CHECK(dp.vector[c] == doctest::Approx(d.vector[order[c]]).epsilon(1e-12));

  // spatial shuffling inside each channel leaves the descriptor unchanged
  FeatureMap shuf = fm;
  for (int c = 0; c < 5; ++c) {
    std::vector<double> vals;
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) vals.push_back(fm.values.at(0, c, h, w));
    std::shuffle(vals.begin(), vals.end(), rng);
    int i = 0;
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) shuf.values.at(0, c, h, w) = vals[i++];
  }
  Descriptor ds = mac_descriptor(shuf);
  for (int c = 0; c < 5; ++c) CHECK(ds.vector[c] == d.vector[c]);
}

// ----------------------------------------------------------------------- PCA

TEST_CASE("pca on an x-axis cloud recovers the axis") {
  std::vector<std::vector<double>> raw;
  for (int i = 0; i < 10; ++i) raw.push_back({double(i) - 4.5, 0.0});
  PcaProjection p = fit_pca(raw, 1);
  REQUIRE(p.out_dim() == 1);
  CHECK(std::fabs(std::fabs(p.basis[0][0]) - 1.0) < 1e-12);
  CHECK(std::fabs(p.basis[0][1]) < 1e-12);
  CHECK(p.mean[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pca matches a brute-force covariance eigendecomposition") {
  const int n = 20, dim = 10, out = 4;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<double>> raw(n, std::vector<double>(dim));
  for (auto& row : raw)
    for (double& v : row) v = nd(rng);

  PcaProjection p = fit_pca(raw, out);

  // oracle: mean, covariance and Jacobi eigendecomposition computed from scratch
  std::vector<double> mean(dim, 0.0);
  for (const auto& row : raw)
    for (int j = 0; j < dim; ++j) mean[j] += row[j] / n;
  std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
  for (const auto& row : raw)
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / n;

  std::vector<double> evals;
  std::vector<std::vector<double>> evecs;  // columns are eigenvectors
  jacobi_eigen(cov, evals, evecs);

  std::vector<int> order(dim);
  for (int i = 0; i < dim; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return evals[a] > evals[b]; });

  for (int j = 0; j < dim; ++j) CHECK(std::fabs(p.mean[j] - mean[j]) < 1e-9);
  for (int r = 0; r < out; ++r) {
    CHECK(std::fabs(p.explained_variance[r] - evals[order[r]]) < 1e-6);
    // match up to sign
    double dot = 0.0;
    for (int j = 0; j < dim; ++j) dot += p.basis[r][j] * evecs[j][order[r]];
    const double s = dot >= 0.0 ? 1.0 : -1.0;
    for (int j = 0; j < dim; ++j)
      CHECK(std::fabs(p.basis[r][j] - s * evecs[j][order[r]]) < 1e-6);
  }

  // invariants: orthonormal rows, descending variance
  for (int r = 0; r < out; ++r) {
    for (int r2 = r; r2 < out; ++r2) {
      double dot = 0.0;
      for (int j = 0; j < dim; ++j) dot += p.basis[r][j] * p.basis[r2][j];
      CHECK(std::fabs(dot - (r == r2 ? 1.0 : 0.0)) < 1e-6);
    }
    if (r > 0) CHECK(p.explained_variance[r] <= p.explained_variance[r - 1] + 1e-12);
  }
}

TEST_CASE("full-dimension pca is an isometry") {
  const int n = 12, dim = 5;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<std::vector<double>> raw(n, std::vector<double>(dim));
  for (auto& row : raw)
    for (double& v : row) v = nd(rng);
  PcaProjection p = fit_pca(raw, dim);

  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> y(dim, 0.0);
    for (int r = 0; r < dim; ++r)
      for (int j = 0; j < dim; ++j) y[r] += p.basis[r][j] * (v[j] - p.mean[j]);
    return y;
  };
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      double d0 = 0.0, d1 = 0.0;
      std::vector<double> ya = apply(raw[a]), yb = apply(raw[b]);
      for (int j = 0; j < dim; ++j) {
        d0 += (raw[a][j] - raw[b][j]) * (raw[a][j] - raw[b][j]);
        d1 += (ya[j] - yb[j]) * (ya[j] - yb[j]);
      }
      CHECK(std::fabs(std::sqrt(d0) - std::sqrt(d1)) < 1e-9);
    }
}

TEST_CASE("pca preconditions") {
  std::vector<std::vector<double>> raw(3, std::vector<double>(4, 0.0));
  CHECK_THROWS(fit_pca(raw, 3));  // needs out_dim + 1 samples
  CHECK_THROWS(fit_pca(raw, 5));  // out_dim beyond input dimension
}

TEST_CASE("project centers, projects and renormalizes") {
  std::vector<std::vector<double>> raw;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 8; ++i) {
    raw.push_back({nd(rng), nd(rng), nd(rng)});
  }
  PcaProjection p = fit_pca(raw, 2);

  Descriptor d = project(p, raw[0], "img0");
  CHECK_FALSE(d.degenerate);
  CHECK(d.image_id == "img0");
  double norm = 0.0;
  for (double v : d.vector) norm += v * v;
  CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-6);

  Descriptor dm = project(p, p.mean);
  CHECK(dm.degenerate);
  for (double v : dm.vector) CHECK(v == 0.0);

  CHECK_THROWS(project(p, {1.0, 2.0}));
}

// -------------------------------------------------------------------- kmeans

TEST_CASE("kmeans separates two blobs for any seed") {
  std::vector<Descriptor> ds;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (int i = 0; i < 20; ++i) {
    const bool left = i < 10;
    ds.push_back(desc({(left ? -5.0 : 5.0) + nd(rng), nd(rng)}, "p" + std::to_string(i)));
  }
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    KMeansResult r = kmeans(ds, 2, seed);
    REQUIRE(r.clusters.size() == 2);
    for (const TaskCluster& c : r.clusters) {
      REQUIRE(c.member_ids.size() == 10);
      const bool left = c.centroid[0] < 0.0;
      for (const std::string& id : c.member_ids) {
        const int i = std::stoi(id.substr(1));
        CHECK((i < 10) == left);
      }
    }
  }
}

TEST_CASE("kmeans with k = n yields singletons at their own points") {
  std::vector<Descriptor> ds;
  for (int i = 0; i < 6; ++i)
    ds.push_back(desc({double(i), double(i * i)}, "q" + std::to_string(i)));
  KMeansResult r = kmeans(ds, 6, 3);
  REQUIRE(r.clusters.size() == 6);
  for (const TaskCluster& c : r.clusters) {
    REQUIRE(c.member_ids.size() == 1);
    const int i = std::stoi(c.member_ids[0].substr(1));
    CHECK(c.centroid[0] == doctest::Approx(double(i)).epsilon(1e-12));
    CHECK(c.centroid[1] == doctest::Approx(double(i * i)).epsilon(1e-12));
  }
}

TEST_CASE("inertia trace is monotone non-increasing on a 100-point fixture") {
  std::vector<Descriptor> ds;
  std::mt19937_64 rng(55);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 100; ++i)
    ds.push_back(desc({nd(rng), nd(rng), nd(rng)}, "r" + std::to_string(i)));
  KMeansResult r = kmeans(ds, 7, 11);
  REQUIRE(r.inertia_trace.size() >= 1);
  for (std::size_t i = 1; i < r.inertia_trace.size(); ++i)
    CHECK(r.inertia_trace[i] <= r.inertia_trace[i - 1] + 1e-9);
}

TEST_CASE("kmeans is bit-reproducible for a fixed seed") {
  std::vector<Descriptor> ds;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 80; ++i)
    ds.push_back(desc({nd(rng), nd(rng), nd(rng), nd(rng)}, "s" + std::to_string(i)));

  KMeansResult a = kmeans(ds, 8, 1234);
  KMeansResult b = kmeans(ds, 8, 1234);
  REQUIRE(a.clusters.size() == b.clusters.size());
  for (std::size_t c = 0; c < a.clusters.size(); ++c) {
    CHECK(a.clusters[c].member_ids == b.clusters[c].member_ids);
    CHECK(a.clusters[c].centroid == b.clusters[c].centroid);  // bitwise
  }

  KMeansResult c = kmeans(ds, 8, 1235);
  bool differs = false;
  for (std::size_t i = 0; i < a.clusters.size(); ++i)
    if (a.clusters[i].member_ids != c.clusters[i].member_ids) differs = true;
  CHECK(differs);  // different seed takes a different path on this fixture
}

TEST_CASE("clusters partition the input; degenerates are excluded") {
  std::vector<Descriptor> ds;
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 30; ++i)
    ds.push_back(desc({nd(rng), nd(rng)}, "u" + std::to_string(i)));
  Descriptor degen = desc({0.0, 0.0}, "degen");
  degen.degenerate = true;
  ds.push_back(degen);

  KMeansResult r = kmeans(ds, 5, 2);
  std::set<std::string> seen;
  for (const TaskCluster& c : r.clusters) {
    CHECK_FALSE(c.member_ids.empty());
    for (const std::string& id : c.member_ids) {
      CHECK(seen.insert(id).second);  // disjoint
      CHECK(id != "degen");
    }
  }
  CHECK(seen.size() == 30);

  CHECK_THROWS(kmeans(std::vector<Descriptor>(ds.begin(), ds.begin() + 3), 5, 0));
}

// ------------------------------------------------------------------ retrieve

TEST_CASE("retrieve_cluster agrees with a brute-force scan") {
  std::vector<Descriptor> ds;
  std::mt19937_64 rng(71);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 60; ++i)
    ds.push_back(desc({nd(rng), nd(rng), nd(rng)}, "v" + std::to_string(i)));
  KMeansResult r = kmeans(ds, 6, 5);

  for (int t = 0; t < 25; ++t) {
    Descriptor q = desc({nd(rng), nd(rng), nd(rng)});
    const TaskCluster& got = retrieve_cluster(q, r.clusters);

    int best = -1;
    double bd = 0.0;
    for (const TaskCluster& c : r.clusters) {
      double d = 0.0;
      for (int j = 0; j < 3; ++j)
        d += (q.vector[j] - c.centroid[j]) * (q.vector[j] - c.centroid[j]);
      if (best < 0 || d < bd) {
        best = c.cluster_id;
        bd = d;
      }
    }
    CHECK(got.cluster_id == best);
  }

  // exact centroid hit resolves to that cluster
  Descriptor q = desc(r.clusters[3].centroid);
  CHECK(retrieve_cluster(q, r.clusters).cluster_id == r.clusters[3].cluster_id);

  Descriptor dg = desc({0.0, 0.0, 0.0});
  dg.degenerate = true;
  CHECK_THROWS(retrieve_cluster(dg, r.clusters));
  CHECK_THROWS(retrieve_cluster(q, {}));
}

TEST_CASE("tie breaks to the lowest cluster id") {
  TaskCluster a, b;
  a.cluster_id = 2;
  a.member_ids = {"x"};
  a.centroid = {1.0, 0.0};
  b.cluster_id = 0;
  b.member_ids = {"y"};
  b.centroid = {-1.0, 0.0};
  Descriptor q = desc({0.0, 0.0});
  CHECK(retrieve_cluster(q, {a, b}).cluster_id == 0);
}

// ---------------------------------------------------------------- persistence

TEST_CASE("cluster file round trips through JSON") {
  ClusterFile cf;
  cf.k = 2;
  cf.seed = 99;
  cf.pca_dim = 3;
  cf.assignments = {{"img_a", 0}, {"img_b", 1}, {"img_c", 0}};
  cf.centroids = {{0.1, 0.2, 0.3}, {-0.5, 0.0, 0.25}};

  ClusterFile back = cluster_file_from_json(cluster_file_to_json(cf));
  CHECK(back.k == cf.k);
  CHECK(back.seed == cf.seed);
  CHECK(back.pca_dim == cf.pca_dim);
  CHECK(back.assignments == cf.assignments);
  CHECK(back.centroids == cf.centroids);

  std::vector<TaskCluster> cl = clusters_from_file(back);
  REQUIRE(cl.size() == 2);
  CHECK(cl[0].cluster_id == 0);
  std::vector<std::string> m0 = cl[0].member_ids;
  std::sort(m0.begin(), m0.end());
  CHECK(m0 == std::vector<std::string>{"img_a", "img_c"});
  CHECK(cl[1].member_ids == std::vector<std::string>{"img_b"});
  CHECK(cl[1].centroid == cf.centroids[1]);

  CHECK_THROWS(cluster_file_from_json("not json"));
}
