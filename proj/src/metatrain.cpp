#include "metalgan/metatrain.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "metalgan/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace metalgan::metatrain {

namespace {

// theta <- theta - lr * (momentum-smoothed) grad, over a network's blocks.
void apply_sgd(netcore::Network& net, double lr, double momentum,
               std::vector<double>& velocity) {
  std::size_t off = 0;
  for (netcore::ParamBlock pb : net.params()) {
    for (std::size_t i = 0; i < pb.n; ++i) {
      double gv = pb.grad[i];
      if (momentum > 0.0) {
        velocity[off + i] = momentum * velocity[off + i] + gv;
        gv = velocity[off + i];
      }
      pb.value[i] -= lr * gv;
    }
    off += pb.n;
  }
}

void write_doubles(std::ofstream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& is, std::size_t n) {
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint blob truncated");
  return v;
}

json arch_json(const TrainConfig& cfg) {
  return json{{"generator",
               {{"depth", cfg.generator.depth},
                {"base_width", cfg.generator.base_width},
                {"in_ch", cfg.generator.in_ch},
                {"out_ch", cfg.generator.out_ch}}},
              {"discriminator",
               {{"n_blocks", cfg.discriminator.n_blocks},
                {"base_width", cfg.discriminator.base_width},
                {"in_ch", cfg.discriminator.in_ch},
                {"patch_output", cfg.discriminator.patch_output}}}};
}

std::string csv_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string mode_name(Mode m) { return m == Mode::kMetalgan ? "metalgan" : "cgan"; }

Mode mode_from_name(const std::string& s) {
  if (s == "metalgan") return Mode::kMetalgan;
  if (s == "cgan") return Mode::kCgan;
  throw std::invalid_argument("unknown mode: " + s);
}

void TrainConfig::validate() const {
  if (n_epochs < 0 || n_meta_iter < 0) throw std::invalid_argument("config: negative loop count");
  if (lr_g < 0.0 || lr_d < 0.0 || stepsize_ml < 0.0)
    throw std::invalid_argument("config: negative rate");
  advloss::validate(weights);
  if (k < 1) throw std::invalid_argument("config: k >= 1");
  if (!(query_fraction > 0.0 && query_fraction <= 1.0))
    throw std::invalid_argument("config: query_fraction in (0,1]");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("config: test_fraction in (0,1)");
  if (resolution % (1 << generator.depth))
    throw std::invalid_argument("config: resolution must be divisible by 2^depth");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("config: momentum in [0,1)");
}

std::string TrainConfig::to_json() const {
  json j{{"n_epochs", n_epochs},
         {"n_meta_iter", n_meta_iter},
         {"lr_g", lr_g},
         {"lr_d", lr_d},
         {"stepsize_ml", stepsize_ml},
         {"weights", {{"w_adv", weights.w_adv}, {"w_l1", weights.w_l1}}},
         {"k", k},
         {"query_fraction", query_fraction},
         {"batch_size", batch_size},
         {"seed", seed},
         {"mode", mode_name(mode)},
         {"resolution", resolution},
         {"test_fraction", test_fraction},
         {"generator",
          {{"depth", generator.depth},
           {"base_width", generator.base_width},
           {"in_ch", generator.in_ch},
           {"out_ch", generator.out_ch}}},
         {"discriminator",
          {{"n_blocks", discriminator.n_blocks},
           {"base_width", discriminator.base_width},
           {"in_ch", discriminator.in_ch},
           {"patch_output", discriminator.patch_output}}},
         {"disc_batch_cap", disc_batch_cap},
         {"resample_queries", resample_queries},
         {"momentum", momentum},
         {"pca_dim", pca_dim}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.n_epochs = j.value("n_epochs", c.n_epochs);
  c.n_meta_iter = j.value("n_meta_iter", c.n_meta_iter);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.stepsize_ml = j.value("stepsize_ml", c.stepsize_ml);
  if (j.contains("weights")) {
    c.weights.w_adv = j["weights"].value("w_adv", c.weights.w_adv);
    c.weights.w_l1 = j["weights"].value("w_l1", c.weights.w_l1);
  }
  c.k = j.value("k", c.k);
  c.query_fraction = j.value("query_fraction", c.query_fraction);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = mode_from_name(j["mode"].get<std::string>());
  c.resolution = j.value("resolution", c.resolution);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  if (j.contains("generator")) {
    const json& g = j["generator"];
    c.generator.depth = g.value("depth", c.generator.depth);
    c.generator.base_width = g.value("base_width", c.generator.base_width);
    c.generator.in_ch = g.value("in_ch", c.generator.in_ch);
    c.generator.out_ch = g.value("out_ch", c.generator.out_ch);
  }
  if (j.contains("discriminator")) {
    const json& d = j["discriminator"];
    c.discriminator.n_blocks = d.value("n_blocks", c.discriminator.n_blocks);
    c.discriminator.base_width = d.value("base_width", c.discriminator.base_width);
    c.discriminator.in_ch = d.value("in_ch", c.discriminator.in_ch);
    c.discriminator.patch_output = d.value("patch_output", c.discriminator.patch_output);
  }
  c.disc_batch_cap = j.value("disc_batch_cap", c.disc_batch_cap);
  c.resample_queries = j.value("resample_queries", c.resample_queries);
  c.momentum = j.value("momentum", c.momentum);
  c.pca_dim = j.value("pca_dim", c.pca_dim);
  c.validate();
  return c;
}

QuerySet sample_query_set(const std::vector<std::string>& ids, double fraction,
                          std::mt19937_64& rng,
                          const std::function<int(const std::string&)>& resolve) {
  if (ids.empty()) throw std::invalid_argument("sample_query_set: empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("sample_query_set: fraction in (0,1]");
  const int n = static_cast<int>(ids.size());
  const int z = static_cast<int>(std::lround(fraction * n));
  if (z < 1)
    throw std::invalid_argument("sample_query_set: dataset smaller than 1/fraction");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> u(0, i);
    std::swap(order[i], order[u(rng)]);
  }
  QuerySet q;
  for (int i = 0; i < z; ++i) {
    const std::string& id = ids[order[i]];
    q.queries.push_back(id);
    q.resolved[id] = resolve(id);
  }
  return q;
}

std::vector<double> inner_loop(const taskforge::TaskCluster& task,
                               const std::vector<double>& theta_g,
                               netcore::UNetGenerator& g, netcore::Discriminator& d,
                               const TrainConfig& cfg,
                               const datapipe::DatasetIndex& index,
                               const datapipe::ImageLoader& loader,
                               std::mt19937_64& rng, std::vector<LossRow>* trace,
                               int epoch, int query_index) {
  if (task.member_ids.empty()) throw std::invalid_argument("inner_loop: empty task");
  const std::vector<double> outer_params = g.flatten_params();
  const std::vector<double> outer_buffers = g.flatten_buffers();
  g.load_params(theta_g);

  std::vector<double> velocity;
  if (cfg.momentum > 0.0) velocity.assign(g.param_count(), 0.0);

  for (int j = 0; j < cfg.n_meta_iter; ++j) {
    const datapipe::LabBatch batch =
        datapipe::load_batch(task, index, loader, cfg.batch_size, rng);
    const advloss::GradientBundle bundle =
        advloss::generator_gradient(g, d, batch.l, batch.ab, cfg.weights);
    apply_sgd(g, cfg.lr_g, cfg.momentum, velocity);
    if (trace)
      trace->push_back({epoch, query_index, j, bundle.loss_adv, bundle.loss_l1,
                        std::numeric_limits<double>::quiet_NaN()});
  }

  std::vector<double> adapted = g.flatten_params();
  g.load_params(outer_params);
  g.load_buffers(outer_buffers);
  return adapted;
}

std::vector<double> reptile_update(const std::vector<double>& theta_g,
                                   const std::vector<double>& theta_tilde_final,
                                   double stepsize_ml) {
  if (theta_g.size() != theta_tilde_final.size())
    throw std::invalid_argument("reptile_update: length mismatch");
  std::vector<double> out(theta_g.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = theta_g[i] + stepsize_ml * (theta_tilde_final[i] - theta_g[i]);
  return out;
}

int discriminator_pass(const taskforge::TaskCluster& task, netcore::Discriminator& d,
                       netcore::UNetGenerator& g, const TrainConfig& cfg,
                       const datapipe::DatasetIndex& index,
                       const datapipe::ImageLoader& loader, std::mt19937_64& rng,
                       std::vector<LossRow>* trace, int epoch, int query_index) {
  if (task.member_ids.empty())
    throw std::invalid_argument("discriminator_pass: empty task");
  std::vector<std::string> ids = task.member_ids;
  const int n = static_cast<int>(ids.size());
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> u(0, i);
    std::swap(ids[i], ids[u(rng)]);
  }
  for (const std::string& id : ids) {
    auto it = index.split.find(id);
    if (it != index.split.end() && it->second == datapipe::Split::kTest)
      throw std::invalid_argument("discriminator_pass: test image in task: " + id);
  }

  std::vector<double> velocity;
  if (cfg.momentum > 0.0) velocity.assign(d.param_count(), 0.0);

  int steps = 0;
  for (int off = 0; off < n; off += cfg.batch_size) {
    if (cfg.disc_batch_cap >= 0 && steps >= cfg.disc_batch_cap) break;
    std::vector<std::string> chunk(ids.begin() + off,
                                   ids.begin() + std::min(n, off + cfg.batch_size));
    const datapipe::LabBatch batch = datapipe::load_ids(chunk, loader);
    const advloss::GradientBundle bundle =
        advloss::discriminator_gradient(d, g, batch.l, batch.ab);
    apply_sgd(d, cfg.lr_d, cfg.momentum, velocity);
    if (trace)
      trace->push_back({epoch, query_index, steps,
                        std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN(), bundle.loss_value});
    ++steps;
  }
  return steps;
}

// ------------------------------------------------------------------- Trainer

Trainer::Trainer(TrainConfig cfg, const datapipe::DatasetIndex& index,
                 const datapipe::ImageLoader& loader,
                 std::vector<taskforge::TaskCluster> clusters, std::string out_dir)
    : cfg_(std::move(cfg)),
      index_(&index),
      loader_(&loader),
      clusters_(std::move(clusters)),
      out_dir_(std::move(out_dir)) {
  cfg_.validate();
  if (cfg_.mode == Mode::kMetalgan && clusters_.empty())
    throw std::invalid_argument("Trainer: metalgan mode needs clusters");
  fs::create_directories(out_dir_);
  g_ = std::make_unique<netcore::UNetGenerator>(cfg_.generator, cfg_.seed);
  d_ = std::make_unique<netcore::Discriminator>(cfg_.discriminator, cfg_.seed);
  rng_train_ = make_rng(cfg_.seed, "train");
  rng_query_ = make_rng(cfg_.seed, "query");
}

void Trainer::ensure_query_set() {
  if (queries_drawn_ && !cfg_.resample_queries) return;
  std::map<std::string, int> assignment;
  for (const taskforge::TaskCluster& c : clusters_)
    for (const std::string& id : c.member_ids) assignment[id] = c.cluster_id;
  queries_ = sample_query_set(index_->ids(datapipe::Split::kTrain), cfg_.query_fraction,
                              rng_query_, [&](const std::string& id) {
                                auto it = assignment.find(id);
                                if (it == assignment.end())
                                  throw std::runtime_error(
                                      "query image missing from clusters: " + id);
                                return it->second;
                              });
  queries_drawn_ = true;
}

void Trainer::flush_trace(std::vector<LossRow>& rows) {
  if (rows.empty()) return;
  const fs::path path = fs::path(out_dir_) / "loss_trace.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (fresh) os << "epoch,query_index,step,loss_g_adv,loss_g_l1,loss_d\n";
  for (const LossRow& r : rows)
    os << r.epoch << ',' << r.query_index << ',' << r.step << ',' << csv_cell(r.loss_g_adv)
       << ',' << csv_cell(r.loss_g_l1) << ',' << csv_cell(r.loss_d) << '\n';
  rows.clear();
}

void Trainer::run_metalgan_epoch(int epoch) {
  ensure_query_set();
  std::vector<LossRow> rows;
  for (std::size_t qi = 0; qi < queries_.queries.size(); ++qi) {
    const std::string& q = queries_.queries[qi];
    const taskforge::TaskCluster& task = clusters_.at(queries_.resolved.at(q));
    const std::vector<double> theta0 = g_->flatten_params();
    const std::vector<double> theta_tilde =
        inner_loop(task, theta0, *g_, *d_, cfg_, *index_, *loader_, rng_train_, &rows,
                   epoch, static_cast<int>(qi));
    g_->load_params(reptile_update(theta0, theta_tilde, cfg_.stepsize_ml));
    discriminator_pass(task, *d_, *g_, cfg_, *index_, *loader_, rng_train_, &rows,
                       epoch, static_cast<int>(qi));
  }
  flush_trace(rows);
}

void Trainer::run_cgan_epoch(int epoch) {
  std::vector<std::string> ids = index_->ids(datapipe::Split::kTrain);
  const int n = static_cast<int>(ids.size());
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> u(0, i);
    std::swap(ids[i], ids[u(rng_train_)]);
  }
  std::vector<double> vel_g, vel_d;
  if (cfg_.momentum > 0.0) {
    vel_g.assign(g_->param_count(), 0.0);
    vel_d.assign(d_->param_count(), 0.0);
  }
  std::vector<LossRow> rows;
  int bi = 0;
  for (int off = 0; off < n; off += cfg_.batch_size, ++bi) {
    std::vector<std::string> chunk(ids.begin() + off,
                                   ids.begin() + std::min(n, off + cfg_.batch_size));
    const datapipe::LabBatch batch = datapipe::load_ids(chunk, *loader_);
    const advloss::GradientBundle gb =
        advloss::generator_gradient(*g_, *d_, batch.l, batch.ab, cfg_.weights);
    apply_sgd(*g_, cfg_.lr_g, cfg_.momentum, vel_g);
    const advloss::GradientBundle db =
        advloss::discriminator_gradient(*d_, *g_, batch.l, batch.ab);
    apply_sgd(*d_, cfg_.lr_d, cfg_.momentum, vel_d);
    rows.push_back({epoch, bi, 0, gb.loss_adv, gb.loss_l1, db.loss_value});
  }
  flush_trace(rows);
}

Checkpoint Trainer::save_checkpoint() const {
  const std::string stem = "checkpoint_e" + std::to_string(epochs_done_);
  const fs::path blob_path = fs::path(out_dir_) / (stem + ".bin");
  const std::vector<double> gp = g_->flatten_params();
  const std::vector<double> gb = g_->flatten_buffers();
  const std::vector<double> dp = d_->flatten_params();
  const std::vector<double> db = d_->flatten_buffers();
  {
    std::ofstream os(blob_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + blob_path.string());
    write_doubles(os, gp);
    write_doubles(os, gb);
    write_doubles(os, dp);
    write_doubles(os, db);
  }
  json manifest{{"arch", arch_json(cfg_)},
                {"epoch", epochs_done_},
                {"mode", mode_name(cfg_.mode)},
                {"seed", cfg_.seed},
                {"param_count", gp.size()},
                {"d_param_count", dp.size()},
                {"counts",
                 {{"g_params", gp.size()},
                  {"g_buffers", gb.size()},
                  {"d_params", dp.size()},
                  {"d_buffers", db.size()}}},
                {"blob", stem + ".bin"},
                {"rng", {{"train", rng_to_string(rng_train_)}, {"query", rng_to_string(rng_query_)}}},
                {"queries_drawn", queries_drawn_},
                {"queries", queries_.queries},
                {"resolved", queries_.resolved},
                {"config", json::parse(cfg_.to_json())}};
  const fs::path mpath = fs::path(out_dir_) / (stem + ".json");
  std::ofstream os(mpath);
  os << manifest.dump(2) << "\n";
  return Checkpoint{mpath.string(), epochs_done_};
}

void Trainer::resume(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot read " + manifest_path);
  json manifest;
  is >> manifest;
  if (mode_from_name(manifest.at("mode").get<std::string>()) != cfg_.mode)
    throw std::runtime_error("resume: mode mismatch");
  if (manifest.at("seed").get<std::uint64_t>() != cfg_.seed)
    throw std::runtime_error("resume: seed mismatch");
  if (manifest.at("arch") != arch_json(cfg_))
    throw std::runtime_error("resume: architecture mismatch");

  const json& counts = manifest.at("counts");
  const fs::path blob_path =
      fs::path(manifest_path).parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bs(blob_path, std::ios::binary);
  if (!bs) throw std::runtime_error("cannot read " + blob_path.string());
  g_->load_params(read_doubles(bs, counts.at("g_params").get<std::size_t>()));
  g_->load_buffers(read_doubles(bs, counts.at("g_buffers").get<std::size_t>()));
  d_->load_params(read_doubles(bs, counts.at("d_params").get<std::size_t>()));
  d_->load_buffers(read_doubles(bs, counts.at("d_buffers").get<std::size_t>()));

  rng_train_ = rng_from_string(manifest.at("rng").at("train").get<std::string>());
  rng_query_ = rng_from_string(manifest.at("rng").at("query").get<std::string>());
  queries_drawn_ = manifest.value("queries_drawn", false);
  queries_.queries = manifest.value("queries", std::vector<std::string>{});
  queries_.resolved = manifest.value("resolved", std::map<std::string, int>{});
  epochs_done_ = manifest.at("epoch").get<int>();
}

std::vector<Checkpoint> Trainer::run() {
  std::vector<Checkpoint> out;
  for (int e = epochs_done_; e < cfg_.n_epochs; ++e) {
    if (cfg_.mode == Mode::kMetalgan)
      run_metalgan_epoch(e);
    else
      run_cgan_epoch(e);
    epochs_done_ = e + 1;
    out.push_back(save_checkpoint());
  }
  return out;
}

std::unique_ptr<netcore::UNetGenerator> load_generator(const std::string& manifest_path,
                                                       TrainConfig* cfg_out) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot read " + manifest_path);
  json manifest;
  is >> manifest;
  TrainConfig cfg = TrainConfig::from_json(manifest.at("config").dump());
  const json& counts = manifest.at("counts");
  const fs::path blob_path =
      fs::path(manifest_path).parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bs(blob_path, std::ios::binary);
  if (!bs) throw std::runtime_error("cannot read " + blob_path.string());
  auto g = std::make_unique<netcore::UNetGenerator>(cfg.generator, cfg.seed);
  g->load_params(read_doubles(bs, counts.at("g_params").get<std::size_t>()));
  g->load_buffers(read_doubles(bs, counts.at("g_buffers").get<std::size_t>()));
  if (cfg_out) *cfg_out = cfg;
  return g;
}

}  // namespace metalgan::metatrain
