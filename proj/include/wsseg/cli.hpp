// wsseg - weakly supervised point cloud segmentation
//
// Command-line front end. dispatch() returns 0 on success, 1 on a
// validation error (bad flags, bad config, violated precondition) and 2 on
// any other runtime failure. Every output file is written atomically.
//
// The SEED environment variable, when set, overrides the seed of every
// stochastic command.

#ifndef WSSEG_CLI_HPP
#define WSSEG_CLI_HPP

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wsseg/colorspace.hpp"
#include "wsseg/config.hpp"
#include "wsseg/core/ply.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/scene.hpp"
#include "wsseg/core/spatial_index.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/model.hpp"
#include "wsseg/propagation.hpp"
#include "wsseg/training.hpp"
#include "wsseg/weaklabel.hpp"

namespace wsseg::cli {

namespace fs = std::filesystem;

inline std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv("SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  std::uint64_t v = 0;
  if (!parse_int(std::string_view(s), v)) throw InvalidArgument(std::string("SEED is not an unsigned integer: ") + s);
  return v;
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg = path.empty() ? parse_config_json(nlohmann::json::object()) : parse_config(path);
  if (const auto s = seed_from_env()) {
    cfg.scene.seed = *s;
    cfg.training.seed = *s;
  }
  return cfg;
}

/// Sorted *.ply files of a directory.
inline std::vector<fs::path> list_ply(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidArgument("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ply") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidArgument("no .ply files in " + dir.string());
  return out;
}

inline std::vector<PointCloud> load_scenes(const fs::path& dir, int min_classes) {
  std::vector<PointCloud> clouds;
  for (const auto& p : list_ply(dir)) clouds.push_back(load_ply(p, min_classes));
  return clouds;
}

inline int max_classes(const std::vector<PointCloud>& clouds, int at_least) {
  int c = at_least;
  for (const auto& cl : clouds) c = std::max(c, cl.num_classes());
  return c;
}

inline int run_gen_scenes(const std::string& config, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = load_run_config(config);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < cfg.scene_count; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = cfg.scene.seed + i;
    std::ostringstream name;
    name << "scene_" << std::setw(3) << std::setfill('0') << i << ".ply";
    save_ply(generate_scene(spec), fs::path(out_dir) / name.str(), true);
  }
  out << "wrote " << cfg.scene_count << " scenes to " << out_dir << "\n";
  return 0;
}

inline int run_pretrain(const std::string& config, const std::string& scenes_dir, const std::string& ckpt,
                        const std::string& history, std::ostream& out) {
  const RunConfig cfg = load_run_config(config);
  const auto clouds = load_scenes(scenes_dir, cfg.scene.num_classes);
  std::vector<PreparedScene> scenes;
  for (const auto& c : clouds) scenes.push_back(prepare_scene(c, cfg.training.knn_k, cfg.training.stats_epsilon));
  auto [params, hist] = train_pretext(scenes, cfg.training, max_classes(clouds, cfg.scene.num_classes));
  save_checkpoint(params, ckpt);
  if (!history.empty()) write_file_atomic(history, history_to_csv(hist));
  out << "pretext loss " << hist.epochs.front().loss_seg << " -> " << hist.epochs.back().loss_seg << "\n";
  return 0;
}

inline int run_weak_label(const std::string& scheme, double fraction, std::size_t regions, double radius,
                          const std::string& scene, std::uint64_t seed, const std::string& out_path, std::ostream& out) {
  if (const auto s = seed_from_env()) seed = *s;
  const PointCloud cloud = load_ply(scene);
  WeakLabelSet w;
  if (scheme == "1pt") {
    w = sample_one_point(cloud, seed);
  } else if (scheme == "fraction") {
    w = sample_fraction(cloud, fraction, seed);
  } else {
    const SpatialIndex index(cloud.positions());
    if (regions == 0) regions = default_superpoint_regions(cloud, index, radius);
    w = sample_superpoint(cloud, index, regions, radius, seed);
  }
  save_weak_labels(w, out_path);
  out << "labeled " << w.size() << " of " << cloud.size() << " points\n";
  return 0;
}

inline int run_train(const std::string& config, const std::string& scenes_dir, const std::string& labels_dir,
                     const std::string& init, bool no_propagation, const std::string& val_dir, const std::string& ckpt,
                     const std::string& history, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(config);
  if (no_propagation) cfg.training.lambda_mode = LambdaMode::kDisabled;
  const auto files = list_ply(scenes_dir);
  std::vector<PointCloud> clouds;
  for (const auto& f : files) clouds.push_back(load_ply(f, cfg.scene.num_classes));
  const int num_classes = max_classes(clouds, cfg.scene.num_classes);

  std::vector<PreparedScene> scenes;
  for (std::size_t i = 0; i < files.size(); ++i) {
    scenes.push_back(prepare_scene(clouds[i], cfg.training.knn_k, cfg.training.stats_epsilon));
    const fs::path label_file = fs::path(labels_dir) / (files[i].stem().string() + ".txt");
    if (fs::exists(label_file)) {
      attach_weak_labels(scenes.back(), load_weak_labels(label_file));
    } else {
      err << "warning: no weak labels for " << files[i].filename().string() << "\n";
    }
  }
  std::vector<PreparedScene> validation;
  const std::string vdir = !val_dir.empty() ? val_dir : cfg.val_scenes;
  if (!vdir.empty())
    for (const auto& c : load_scenes(vdir, num_classes)) validation.push_back(prepare_scene(c, cfg.training.knn_k));

  ModelParams params;
  if (!init.empty()) {
    const ModelParams loaded = load_checkpoint(init);
    params = loaded.head == Head::kPretext ? transfer_encoder(loaded, num_classes, cfg.training.seed) : loaded;
  } else {
    params = init_params(Head::kSegmentation, num_classes, cfg.training.embedding_dim, cfg.training.hidden,
                         cfg.training.seed);
  }
  auto [trained, hist] = train_weak(scenes, std::move(params), cfg.training, validation);
  save_checkpoint(trained, ckpt);
  write_file_atomic(history, history_to_csv(hist));
  if (hist.skipped_steps) err << "warning: skipped " << hist.skipped_steps << " scene steps without labels\n";
  out << "final loss_seg " << hist.epochs.back().loss_seg << ", val mIoU " << hist.epochs.back().val_miou << "\n";
  return 0;
}

inline int run_propagate(const std::string& ckpt, const std::string& scene, const std::string& labels,
                         std::size_t k_top, double sigma, const std::string& out_path, std::ostream& out) {
  const ModelParams params = load_checkpoint(ckpt);
  if (params.head != Head::kSegmentation) throw InvalidArgument("propagate needs a segmentation checkpoint");
  const PointCloud cloud = load_ply(scene, params.num_classes);
  PreparedScene ps = prepare_scene(cloud);
  attach_weak_labels(ps, load_weak_labels(labels));
  if (ps.labeled.empty()) throw InvalidArgument("no labeled points");

  const ForwardResult fr = predict(params, ps.seg_input);
  std::vector<char> is_labeled(cloud.size(), 0);
  for (auto i : ps.labeled) is_labeled[i] = 1;
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (!is_labeled[i]) unlabeled.push_back(i);
  PropagationConfig pc;
  pc.k_top = k_top;
  if (sigma > 0.0) pc.sigma = sigma;
  const PseudoLabelSet pseudo =
      propagate(gather_rows(fr.z, ps.labeled), ps.labeled_classes, gather_rows(fr.z, unlabeled), params.num_classes, pc);

  std::string text;
  for (const auto& pl : pseudo.labels) {
    text += std::to_string(unlabeled[pl.index]) + " " + std::to_string(pl.chosen_class);
    for (double p : pl.probs) text += " " + format_double(p);
    text += "\n";
  }
  write_file_atomic(out_path, text);
  out << "pseudo-labeled " << pseudo.num_masked() << " points (sigma " << pseudo.sigma << ")\n";
  return 0;
}

inline int run_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out_path,
                    std::ostream& out) {
  const PointCloud pred = load_ply(pred_path);
  const PointCloud gt = load_ply(gt_path);
  if (!pred.has_labels()) throw InvalidArgument("prediction file has no label property");
  if (!gt.has_labels()) throw InvalidArgument("ground-truth file has no label property");
  if (pred.size() != gt.size()) throw InvalidArgument("prediction and ground truth differ in point count");
  const int c = std::max(pred.num_classes(), gt.num_classes());
  std::vector<int> p = pred.labels();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] == kUnlabeled && gt.labels()[i] != kUnlabeled)
      throw InvalidArgument("prediction missing for point " + std::to_string(i));
  const auto report = metrics_report(confusion(p, gt.labels(), c));
  if (!out_path.empty()) write_file_atomic(out_path, report.dump(2) + "\n");
  out << "mIoU " << report["miou"].get<double>() << " OA " << report["oa"].get<double>() << "\n";
  return 0;
}

inline int run_colorize(const std::string& ckpt, const std::string& scene, const std::string& out_path, std::ostream& out) {
  const ModelParams params = load_checkpoint(ckpt);
  if (params.head != Head::kPretext) throw InvalidArgument("colorize needs a pretext checkpoint");
  const PointCloud cloud = load_ply(scene);
  MatrixX3 gray(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const LabColor lab = rgb_to_lab(cloud.color(i));
    gray.row(static_cast<Eigen::Index>(i)) = lab_to_rgb({lab.L, 0.0, 0.0}).transpose();
  }
  const PointCloud gray_cloud = cloud.with_colors(gray);
  const PreparedScene ps = prepare_scene(gray_cloud);
  const ForwardResult fr = predict(params, ps.pretext_input);
  MatrixX3 colored(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const LabColor lab{ps.pretext_input.features(r, 3) / kLightnessScale, fr.outputs(r, kColA) / kChromaScale,
                       fr.outputs(r, kColB) / kChromaScale};
    colored.row(r) = lab_to_rgb(lab).transpose();
  }
  save_ply(cloud.with_colors(colored), out_path, true);
  out << "colorized " << cloud.size() << " points\n";
  return 0;
}

/// Random clustered embeddings: 4 labeled points per class plus n unlabeled.
struct BenchProblem {
  Matrix z_labeled;
  std::vector<int> labels;
  Matrix z_unlabeled;
};

inline BenchProblem make_bench_problem(std::size_t n, int c, int d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix centers(c, d);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = 3.0 * rng.normal();
  BenchProblem p;
  const int per_class = 4;
  p.z_labeled.resize(c * per_class, d);
  for (int k = 0; k < c * per_class; ++k) {
    p.labels.push_back(k % c);
    for (int j = 0; j < d; ++j) p.z_labeled(k, j) = centers(k % c, j) + rng.normal();
  }
  p.z_unlabeled.resize(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < p.z_unlabeled.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(c)));
    for (int j = 0; j < d; ++j) p.z_unlabeled(i, j) = centers(k, j) + rng.normal();
  }
  return p;
}

inline int run_bench(std::size_t n, int c, int d, std::size_t dense_max, std::uint64_t seed, std::ostream& out) {
  if (n < 1 || c < 1 || d < 1) throw InvalidArgument("--n, --c and --d must be positive");
  if (const auto s = seed_from_env()) seed = *s;
  dense_max = std::min(dense_max, kDenseGraphMaxPoints);
  std::vector<std::size_t> sizes;
  for (std::size_t m = n; m >= 1000 || sizes.empty(); m /= 2) {
    sizes.push_back(m);
    if (m < 2) break;
  }
  std::reverse(sizes.begin(), sizes.end());
  auto seconds = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  out << std::left << std::setw(10) << "N" << std::setw(16) << "sparse_s" << "dense_s\n";
  for (const std::size_t m : sizes) {
    const BenchProblem p = make_bench_problem(m, c, d, seed);
    PropagationConfig pc;
    const double ts = seconds([&] { propagate(p.z_labeled, p.labels, p.z_unlabeled, c, pc); });
    out << std::setw(10) << m << std::setw(16) << ts;
    if (m <= dense_max) {
      const double sigma = adaptive_sigma(p.z_unlabeled, compute_prototypes(p.z_labeled, p.labels, c));
      out << seconds([&] { dense_graph_propagation(p.z_labeled, p.labels, p.z_unlabeled, c, sigma); }) << "\n";
    } else {
      out << "refused (N > " << dense_max << ")\n";
    }
  }
  return 0;
}

/// Runs one subcommand; see the file comment for exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Weakly supervised point cloud segmentation: colorization pretraining, weak labels, "
               "sparse label propagation"};
  app.name("wsseg");
  app.require_subcommand(1);
  std::function<int()> action;

  std::string config, out_path, scenes, labels, init, history, scene, ckpt, pred, gt, val;
  std::string scheme;
  double fraction = 0.01, radius = kDefaultSuperpointRadius, sigma = 0.0;
  std::size_t regions = 0, k_top = PropagationConfig{}.k_top, n = 100000, dense_max = kDenseGraphMaxPoints;
  int classes = 8, dim = 16;
  std::uint64_t seed = 0;
  bool no_prop = false;

  auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic labeled scenes");
  gen->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->callback([&] { action = [&] { return run_gen_scenes(config, out_path, out); }; });

  auto* pre = app.add_subcommand("pretrain", "Colorization pretraining");
  pre->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
  pre->add_option("--scenes", scenes, "Directory of PLY scenes")->required();
  pre->add_option("--out", out_path, "Checkpoint to write")->required();
  pre->add_option("--history", history, "Optional CSV of per-epoch losses");
  pre->callback([&] { action = [&] { return run_pretrain(config, scenes, out_path, history, out); }; });

  auto* weak = app.add_subcommand("weak-label", "Sample a weak annotation of one scene");
  weak->add_option("--scheme", scheme, "1pt | fraction | spt")->required()->check(CLI::IsMember({"1pt", "fraction", "spt"}));
  weak->add_option("--fraction", fraction, "Labeled fraction for --scheme fraction");
  weak->add_option("--regions", regions, "Region count for --scheme spt (default: about 0.1% of points)");
  weak->add_option("--radius", radius, "Region radius in meters for --scheme spt");
  weak->add_option("--scene", scene, "Fully labeled PLY")->required()->check(CLI::ExistingFile);
  weak->add_option("--seed", seed, "Sampling seed");
  weak->add_option("--out", out_path, "Weak-label text file")->required();
  weak->callback([&] { action = [&] { return run_weak_label(scheme, fraction, regions, radius, scene, seed, out_path, out); }; });

  auto* train = app.add_subcommand("train", "Weakly supervised fine-tuning");
  train->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
  train->add_option("--scenes", scenes, "Directory of PLY scenes")->required();
  train->add_option("--labels", labels, "Directory of <scene>.txt weak-label files")->required();
  train->add_option("--init", init, "Pretext or segmentation checkpoint to start from");
  train->add_flag("--no-propagation", no_prop, "Disable sparse label propagation");
  train->add_option("--val", val, "Directory of fully labeled validation PLYs");
  train->add_option("--out", out_path, "Checkpoint to write")->required();
  train->add_option("--history", history, "CSV of per-epoch records")->required();
  train->callback([&] {
    action = [&] { return run_train(config, scenes, labels, init, no_prop, val, out_path, history, out, err); };
  });

  auto* prop = app.add_subcommand("propagate", "Write sparse pseudo labels of one scene");
  prop->add_option("--ckpt", ckpt, "Segmentation checkpoint")->required()->check(CLI::ExistingFile);
  prop->add_option("--scene", scene, "PLY scene")->required()->check(CLI::ExistingFile);
  prop->add_option("--labels", labels, "Weak-label text file")->required()->check(CLI::ExistingFile);
  prop->add_option("--k-top", k_top, "Pseudo labels per class")->check(CLI::PositiveNumber);
  prop->add_option("--sigma", sigma, "Similarity bandwidth (default: adaptive)");
  prop->add_option("--out", out_path, "Pseudo-label text file")->required();
  prop->callback([&] { action = [&] { return run_propagate(ckpt, scene, labels, k_top, sigma, out_path, out); }; });

  auto* ev = app.add_subcommand("eval", "mIoU / OA of predicted labels");
  ev->add_option("--pred", pred, "PLY with predicted labels")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", gt, "PLY with ground-truth labels")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out_path, "JSON report");
  ev->callback([&] { action = [&] { return run_eval(pred, gt, out_path, out); }; });

  auto* col = app.add_subcommand("colorize", "Predict colors of a gray copy of a scene");
  col->add_option("--ckpt", ckpt, "Pretext checkpoint")->required()->check(CLI::ExistingFile);
  col->add_option("--scene", scene, "PLY scene")->required()->check(CLI::ExistingFile);
  col->add_option("--out", out_path, "Colorized PLY")->required();
  col->callback([&] { action = [&] { return run_colorize(ckpt, scene, out_path, out); }; });

  auto* bench = app.add_subcommand("bench-propagation", "Time sparse propagation against the dense graph reference");
  bench->add_option("--n", n, "Largest unlabeled point count")->check(CLI::PositiveNumber);
  bench->add_option("--c", classes, "Classes")->check(CLI::PositiveNumber);
  bench->add_option("--d", dim, "Embedding dimension")->check(CLI::PositiveNumber);
  bench->add_option("--dense-max", dense_max, "Largest N for the dense reference (capped at 20000)");
  bench->add_option("--seed", seed, "Problem seed");
  bench->callback([&] { action = [&] { return run_bench(n, classes, dim, dense_max, seed, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    return action ? action() : 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace wsseg::cli

#endif  // WSSEG_CLI_HPP
