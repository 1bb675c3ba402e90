#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "metalgan/advloss.hpp"
#include "metalgan/datapipe.hpp"
#include "metalgan/netcore.hpp"
#include "metalgan/taskforge.hpp"

namespace metalgan::metatrain {

enum class Mode { kMetalgan, kCgan };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct TrainConfig {
  int n_epochs = 200;
  int n_meta_iter = 100;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double stepsize_ml = 1e-3;
  advloss::LossWeights weights;  // w_adv = 1, w_l1 = 100
  int k = 64;
  double query_fraction = 0.1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  Mode mode = Mode::kMetalgan;

  // Artifact-level knobs.
  int resolution = 32;
  double test_fraction = 0.2;
  netcore::GeneratorConfig generator;
  netcore::DiscriminatorConfig discriminator;
  int disc_batch_cap = -1;       // <0 = all task batches; 0 caps the pass to nothing
  bool resample_queries = false; // redraw the query set each epoch
  double momentum = 0.0;         // plain SGD by default
  int pca_dim = 16;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct QuerySet {
  std::vector<std::string> queries;
  std::map<std::string, int> resolved;  // query id -> cluster_id
};

// Draws round(fraction * |ids|) ids without replacement and resolves each to
// its task cluster. `resolve` typically wraps retrieve_cluster on the image's
// descriptor, or a persisted assignment table.
QuerySet sample_query_set(const std::vector<std::string>& ids, double fraction,
                          std::mt19937_64& rng,
                          const std::function<int(const std::string&)>& resolve);

// One CSV row of the loss trace.
struct LossRow {
  int epoch = 0;
  int query_index = 0;
  int step = 0;
  double loss_g_adv = std::numeric_limits<double>::quiet_NaN();
  double loss_g_l1 = std::numeric_limits<double>::quiet_NaN();
  double loss_d = std::numeric_limits<double>::quiet_NaN();
};

// N_meta-iter plain SGD steps on one task, starting from theta_g. Returns the
// adapted parameter vector; the generator is restored to theta_g on exit and
// the discriminator is untouched.
std::vector<double> inner_loop(const taskforge::TaskCluster& task,
                               const std::vector<double>& theta_g,
                               netcore::UNetGenerator& g, netcore::Discriminator& d,
                               const TrainConfig& cfg,
                               const datapipe::DatasetIndex& index,
                               const datapipe::ImageLoader& loader,
                               std::mt19937_64& rng,
                               std::vector<LossRow>* trace = nullptr,
                               int epoch = 0, int query_index = 0);

// theta_g + stepsize_ml * (theta_tilde - theta_g), elementwise.
std::vector<double> reptile_update(const std::vector<double>& theta_g,
                                   const std::vector<double>& theta_tilde_final,
                                   double stepsize_ml);

// One discriminator sweep over the task's pairs in batches; the generator is
// frozen. Returns the number of batches stepped.
int discriminator_pass(const taskforge::TaskCluster& task, netcore::Discriminator& d,
                       netcore::UNetGenerator& g, const TrainConfig& cfg,
                       const datapipe::DatasetIndex& index,
                       const datapipe::ImageLoader& loader, std::mt19937_64& rng,
                       std::vector<LossRow>* trace = nullptr,
                       int epoch = 0, int query_index = 0);

struct Checkpoint {
  std::string manifest_path;
  int epoch = 0;  // epochs completed
};

// Owns the two networks and the epoch loop for both training modes.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const datapipe::DatasetIndex& index,
          const datapipe::ImageLoader& loader,
          std::vector<taskforge::TaskCluster> clusters, std::string out_dir);

  // Loads parameters, buffers, rng streams and epoch counter from a manifest.
  void resume(const std::string& manifest_path);

  // Runs epochs [current, n_epochs), checkpointing after each.
  std::vector<Checkpoint> run();

  netcore::UNetGenerator& generator() { return *g_; }
  netcore::Discriminator& discriminator() { return *d_; }
  const QuerySet& query_set() const { return queries_; }
  int epochs_done() const { return epochs_done_; }

  Checkpoint save_checkpoint() const;

 private:
  void run_metalgan_epoch(int epoch);
  void run_cgan_epoch(int epoch);
  void ensure_query_set();
  void flush_trace(std::vector<LossRow>& rows);

  TrainConfig cfg_;
  const datapipe::DatasetIndex* index_;
  const datapipe::ImageLoader* loader_;
  std::vector<taskforge::TaskCluster> clusters_;
  std::string out_dir_;
  std::unique_ptr<netcore::UNetGenerator> g_;
  std::unique_ptr<netcore::Discriminator> d_;
  std::mt19937_64 rng_train_;
  std::mt19937_64 rng_query_;
  QuerySet queries_;
  bool queries_drawn_ = false;
  int epochs_done_ = 0;
};

// Loads just the generator from a checkpoint manifest (inference paths).
std::unique_ptr<netcore::UNetGenerator> load_generator(const std::string& manifest_path,
                                                       TrainConfig* cfg_out = nullptr);

}  // namespace metalgan::metatrain
