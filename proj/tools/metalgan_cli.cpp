#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "metalgan/advloss.hpp"
#include "metalgan/colorlab.hpp"
#include "metalgan/datapipe.hpp"
#include "metalgan/evalkit.hpp"
#include "metalgan/metatrain.hpp"
#include "metalgan/taskforge.hpp"
#include "metalgan/toycorpus.hpp"

namespace fs = std::filesystem;
using namespace metalgan;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Backbone -> MAC -> PCA -> unit descriptors for the train split.
std::vector<taskforge::Descriptor> build_descriptors(
    const datapipe::DatasetIndex& index, const datapipe::ImageLoader& loader,
    const taskforge::FeatureBackbone& backbone, int pca_dim,
    taskforge::PcaProjection* pca_out = nullptr) {
  const std::vector<std::string> ids = index.ids(datapipe::Split::kTrain);
  std::vector<std::vector<double>> macs;
  std::vector<std::string> mac_ids;
  for (const std::string& id : ids) {
    const taskforge::Descriptor d =
        taskforge::mac_descriptor(taskforge::extract_features(loader.rgb(id), backbone), id);
    if (d.degenerate) {
      std::cerr << "cluster: skipping degenerate descriptor for " << id << "\n";
      continue;
    }
    macs.push_back(d.vector);
    mac_ids.push_back(id);
  }
  const taskforge::PcaProjection pca = taskforge::fit_pca(macs, pca_dim);
  std::vector<taskforge::Descriptor> out;
  for (std::size_t i = 0; i < macs.size(); ++i)
    out.push_back(taskforge::project(pca, macs[i], mac_ids[i]));
  if (pca_out) *pca_out = pca;
  return out;
}

int cmd_ingest(const std::string& data) {
  const datapipe::DatasetIndex idx = datapipe::ingest(data);
  std::cout << "ingested " << idx.entries.size() << " images from " << data;
  if (idx.skipped) std::cout << " (" << idx.skipped << " skipped)";
  std::cout << "\n";
  for (const auto& e : idx.entries)
    std::cout << e.image_id << " " << e.width << "x" << e.height << " " << e.path << "\n";
  return 0;
}

int cmd_cluster(const std::string& data, int k, std::uint64_t seed, int pca_dim,
                double test_fraction, const std::string& out_path) {
  datapipe::DatasetIndex idx = datapipe::split(datapipe::ingest(data), test_fraction, seed);
  const auto backbone = taskforge::make_desk_backbone({});
  datapipe::ImageLoader loader(idx, backbone->input_resolution());
  const std::vector<taskforge::Descriptor> descriptors =
      build_descriptors(idx, loader, *backbone, pca_dim);
  const taskforge::KMeansResult km = taskforge::kmeans(descriptors, k, seed);

  taskforge::ClusterFile cf;
  cf.k = k;
  cf.seed = seed;
  cf.pca_dim = pca_dim;
  for (const taskforge::TaskCluster& c : km.clusters) {
    cf.centroids.push_back(c.centroid);
    for (const std::string& id : c.member_ids) cf.assignments[id] = c.cluster_id;
  }
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << taskforge::cluster_file_to_json(cf) << "\n";
  std::cout << "wrote " << out_path << " (" << cf.assignments.size() << " images, k=" << k
            << ")\n";
  return 0;
}

int cmd_train(const std::string& mode_flag, const std::string& config_path,
              const std::string& clusters_path, const std::string& data,
              const std::string& out_dir, const std::string& resume_path) {
  metatrain::TrainConfig cfg = config_path.empty()
                                   ? metatrain::TrainConfig{}
                                   : metatrain::TrainConfig::from_json(read_file(config_path));
  if (!mode_flag.empty()) cfg.mode = metatrain::mode_from_name(mode_flag);
  cfg.validate();

  datapipe::DatasetIndex idx =
      datapipe::split(datapipe::ingest(data), cfg.test_fraction, cfg.seed);
  datapipe::ImageLoader loader(idx, cfg.resolution);

  std::vector<taskforge::TaskCluster> clusters;
  if (cfg.mode == metatrain::Mode::kMetalgan) {
    if (clusters_path.empty())
      throw std::runtime_error("train: metalgan mode requires --clusters");
    clusters = taskforge::clusters_from_file(
        taskforge::cluster_file_from_json(read_file(clusters_path)));
  }

  metatrain::Trainer trainer(cfg, idx, loader, std::move(clusters), out_dir);
  if (!resume_path.empty()) trainer.resume(resume_path);
  const auto checkpoints = trainer.run();
  if (!checkpoints.empty())
    std::cout << "final checkpoint: " << checkpoints.back().manifest_path << "\n";
  else
    std::cout << "nothing to do (already at " << trainer.epochs_done() << " epochs)\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data,
                 const std::string& classifier_path, int splits,
                 const std::string& out_path, const std::string& grid_path) {
  metatrain::TrainConfig cfg;
  const auto g = metatrain::load_generator(checkpoint, &cfg);
  datapipe::DatasetIndex idx =
      datapipe::split(datapipe::ingest(data), cfg.test_fraction, cfg.seed);
  datapipe::ImageLoader loader(idx, cfg.resolution);
  const std::vector<std::string> test_ids = idx.ids(datapipe::Split::kTest);
  if (test_ids.empty()) throw std::runtime_error("evaluate: empty test split");

  std::vector<colorlab::ImageRGB> generated;
  std::vector<colorlab::ImageLab> grid_in, grid_gt, grid_out;
  double l1_sum = 0.0;
  for (const std::string& id : test_ids) {
    const colorlab::ImageLab& gt = loader.normalized_lab(id);
    const datapipe::LabBatch b = datapipe::load_ids({id}, loader);
    const Tensor ab = g->forward(b.l, false);
    l1_sum += advloss::l1_loss(ab, b.ab);

    colorlab::ImageLab pred = gt;
    for (std::size_t i = 0; i < pred.plane_size(); ++i) {
      pred.ab[2 * i] = ab[i];
      pred.ab[2 * i + 1] = ab[pred.plane_size() + i];
    }
    const colorlab::ImageLab composed = colorlab::compose_output(gt, pred);
    generated.push_back(colorlab::lab_to_rgb(colorlab::denormalize(composed)));
    if (grid_in.size() < 8) {
      grid_in.push_back(colorlab::denormalize(gt));
      grid_gt.push_back(colorlab::denormalize(gt));
      grid_out.push_back(colorlab::denormalize(composed));
    }
  }
  const double test_l1 = l1_sum / static_cast<double>(test_ids.size());

  const auto clf = evalkit::load_classifier(classifier_path);
  const evalkit::ScoreReport score = evalkit::inception_score(generated, *clf, splits);

  json report = json::parse(score.to_json());
  report["test_l1"] = test_l1;
  report["checkpoint"] = checkpoint;
  report["test_fraction"] = cfg.test_fraction;
  report["mode"] = metatrain::mode_name(cfg.mode);
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";

  if (!grid_path.empty()) evalkit::sample_grid(grid_in, grid_gt, grid_out, grid_path);
  return 0;
}

int cmd_colorize(const std::string& checkpoint, const std::string& input,
                 const std::string& out_path) {
  metatrain::TrainConfig cfg;
  const auto g = metatrain::load_generator(checkpoint, &cfg);
  cv::Mat m = cv::imread(input, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read " + input);
  cv::Mat r;
  cv::resize(m, r, cv::Size(cfg.resolution, cfg.resolution), 0, 0, cv::INTER_LINEAR);
  colorlab::ImageRGB rgb = colorlab::make_rgb(cfg.resolution, cfg.resolution, "input");
  for (int y = 0; y < cfg.resolution; ++y)
    for (int x = 0; x < cfg.resolution; ++x) {
      const cv::Vec3b px = r.at<cv::Vec3b>(y, x);
      rgb.at(y, x, 0) = px[2];
      rgb.at(y, x, 1) = px[1];
      rgb.at(y, x, 2) = px[0];
    }
  const colorlab::ImageLab lab = colorlab::normalize(colorlab::rgb_to_lab(rgb));
  const Tensor l = colorlab::l_plane_batch({&lab});
  const Tensor ab = g->forward(l, false);
  colorlab::ImageLab pred = lab;
  for (std::size_t i = 0; i < pred.plane_size(); ++i) {
    pred.ab[2 * i] = ab[i];
    pred.ab[2 * i + 1] = ab[pred.plane_size() + i];
  }
  const colorlab::ImageRGB out =
      colorlab::lab_to_rgb(colorlab::denormalize(colorlab::compose_output(lab, pred)));
  cv::Mat om(out.height, out.width, CV_8UC3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      om.at<cv::Vec3b>(y, x) = cv::Vec3b(out.at(y, x, 2), out.at(y, x, 1), out.at(y, x, 0));
  if (!cv::imwrite(out_path, om)) throw std::runtime_error("cannot write " + out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-based meta-trained adversarial colorization toolkit"};
  app.require_subcommand(1);

  std::string data, out_path, config_path, clusters_path, resume_path, mode_flag;
  std::string checkpoint, classifier_path, input_path, grid_path;
  std::uint64_t seed = 0;
  int k = 64, pca_dim = 16, splits = 10, n_images = 500, resolution = 32;
  double test_fraction = 0.2;

  auto* ingest = app.add_subcommand("ingest", "Index an image directory");
  ingest->add_option("--data", data, "image directory")->required();

  auto* cluster = app.add_subcommand("cluster", "Build task clusters from the train split");
  cluster->add_option("--data", data)->required();
  cluster->add_option("--out", out_path, "cluster assignment JSON")->required();
  cluster->add_option("--k", k, "number of clusters");
  cluster->add_option("--seed", seed);
  cluster->add_option("--pca-dim", pca_dim);
  cluster->add_option("--test-fraction", test_fraction);

  auto* train = app.add_subcommand("train", "Train in metalgan or cgan mode");
  train->add_option("--mode", mode_flag)->check(CLI::IsMember({"metalgan", "cgan"}));
  train->add_option("--config", config_path, "TrainConfig JSON");
  train->add_option("--clusters", clusters_path, "cluster assignment JSON");
  train->add_option("--data", data)->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint manifest to resume from");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--data", data)->required();
  evaluate->add_option("--classifier", classifier_path)->required();
  evaluate->add_option("--splits", splits);
  evaluate->add_option("--out", out_path, "report JSON")->required();
  evaluate->add_option("--grid", grid_path, "optional sample grid PNG");

  auto* colorize = app.add_subcommand("colorize", "Colorize a single image");
  colorize->add_option("--checkpoint", checkpoint)->required();
  colorize->add_option("--input", input_path)->required();
  colorize->add_option("--out", out_path)->required();

  auto* corpus = app.add_subcommand("make-corpus", "Generate the procedural toy corpus");
  corpus->add_option("--out", out_path)->required();
  corpus->add_option("--n", n_images);
  corpus->add_option("--res", resolution);
  corpus->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(ingest)) return cmd_ingest(data);
    if (app.got_subcommand(cluster))
      return cmd_cluster(data, k, seed, pca_dim, test_fraction, out_path);
    if (app.got_subcommand(train))
      return cmd_train(mode_flag, config_path, clusters_path, data, out_path, resume_path);
    if (app.got_subcommand(evaluate))
      return cmd_evaluate(checkpoint, data, classifier_path, splits, out_path, grid_path);
    if (app.got_subcommand(colorize)) return cmd_colorize(checkpoint, input_path, out_path);
    if (app.got_subcommand(corpus)) {
      toycorpus::make_toy_corpus(out_path, {n_images, resolution, seed});
      std::cout << "wrote " << n_images << " images to " << out_path << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
