// wsseg - weakly supervised point cloud segmentation
//
// Loss composition, Adam, and the two training loops: colorization
// pretraining and weakly supervised fine-tuning with sparse label
// propagation.
//
// Each optimizer step draws a random subset of center points from a scene
// (points_per_step). Because the encoder has a single aggregation stage,
// per-point outputs depend only on the raw features of the point's K
// neighbors, so the subset forward pass is exact for the points it covers.

#ifndef WSSEG_TRAINING_HPP
#define WSSEG_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsseg/colorspace.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/spatial_index.hpp"
#include "wsseg/core/types.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/model.hpp"
#include "wsseg/pretext.hpp"
#include "wsseg/propagation.hpp"
#include "wsseg/weaklabel.hpp"

namespace wsseg {

/// How the propagation loss weight evolves over epochs.
enum class LambdaMode {
  kNonlinear,  ///< 0 before warmup, then exp(epoch / max_epoch - 1)
  kConstant,   ///< lambda_constant from the first epoch on (ignores warmup)
  kDisabled,   ///< always 0; propagation never runs
};

struct TrainConfig {
  int max_epoch = 80;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 1;  ///< scenes per optimizer step
  std::uint64_t seed = 0;
  PropagationConfig propagation;
  int warmup_epoch = 30;
  LambdaMode lambda_mode = LambdaMode::kNonlinear;
  double lambda_constant = 1.0;
  std::size_t points_per_step = 4096;  ///< center points per scene and step; 0 = every point
  int val_every = 1;                   ///< validation period in epochs (the last epoch is always validated)
  int hidden = kDefaultHidden;
  int embedding_dim = kDefaultEmbedding;
  std::size_t knn_k = SpatialIndex::kDefaultK;
  double stats_epsilon = kDefaultStatsEpsilon;

  void validate() const {
    if (max_epoch < 1) throw InvalidArgument("max_epoch must be positive");
    if (warmup_epoch < 0) throw InvalidArgument("warmup_epoch must be non-negative");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw InvalidArgument("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw InvalidArgument("adam_eps must be positive");
    if (batch < 1) throw InvalidArgument("batch must be positive");
    if (propagation.k_top < 1) throw InvalidArgument("k_top must be positive");
    if (propagation.sigma && !(*propagation.sigma > 0.0)) throw InvalidArgument("sigma must be positive");
    if (val_every < 1) throw InvalidArgument("val_every must be positive");
    if (knn_k < 1) throw InvalidArgument("knn_k must be positive");
  }
};

struct EpochRecord {
  int epoch = 0;
  double loss_seg = 0.0;  ///< segmentation loss (fine-tuning) or pretext loss (pretraining)
  double loss_sp = 0.0;
  double lambda = 0.0;
  double val_miou = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t skipped_steps = 0;    ///< scenes without labeled points
  std::size_t clamped_logs = 0;     ///< loss_sp log-argument clamps
};

/// Propagation loss weight; 0 before warmup, then exp(epoch / max_epoch - 1).
inline double lambda_schedule(int epoch, int max_epoch, int warmup_epoch) {
  if (max_epoch <= 0) throw InvalidArgument("max_epoch must be positive");
  if (epoch < 0 || epoch > max_epoch) throw InvalidArgument("epoch outside [0, max_epoch]");
  if (epoch < warmup_epoch) return 0.0;
  return std::exp(static_cast<double>(epoch) / static_cast<double>(max_epoch) - 1.0);
}

inline double lambda_for(const TrainConfig& cfg, int epoch) {
  switch (cfg.lambda_mode) {
    case LambdaMode::kNonlinear: return lambda_schedule(epoch, cfg.max_epoch, cfg.warmup_epoch);
    case LambdaMode::kConstant: return cfg.lambda_constant;
    case LambdaMode::kDisabled: return 0.0;
  }
  return 0.0;
}

/// Mean softmax cross entropy; gradient w.r.t. logits is (softmax - onehot) / M.
inline LossResult loss_seg(const Matrix& logits, std::span<const int> labels) {
  const auto m = logits.rows();
  if (m == 0) throw InvalidArgument("no labeled points in batch");
  if (static_cast<std::size_t>(m) != labels.size()) throw InvalidArgument("logits and labels differ in length");
  LossResult out{0.0, softmax_rows(logits)};
  const double inv = 1.0 / static_cast<double>(m);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw InvalidArgument("label " + std::to_string(y) + " out of range");
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    sum += lse - logits(i, y);
    out.grad(i, y) -= 1.0;
  }
  out.grad *= inv;
  out.value = sum * inv;
  return out;
}

inline double loss_total(double loss_seg_value, double loss_sp_value, double lambda) {
  return loss_seg_value + lambda * loss_sp_value;
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  explicit AdamState(const ModelParams& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

/// Bias-corrected Adam update in place; rejects non-finite gradients by tensor name.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg) {
  std::vector<const Matrix*> g;
  grads.for_each_tensor([&](const std::string& name, const Matrix& t) {
    if (!t.allFinite()) throw InvalidArgument("non-finite gradient in parameter " + name);
    g.push_back(&t);
  });
  std::vector<Matrix*> m, v;
  state.m.for_each_tensor([&](const std::string&, Matrix& t) { m.push_back(&t); });
  state.v.for_each_tensor([&](const std::string&, Matrix& t) { v.push_back(&t); });
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string& name, Matrix& p) {
    const Matrix& gi = *g[i];
    if (gi.rows() != p.rows() || gi.cols() != p.cols()) throw InvalidArgument("gradient shape mismatch for " + name);
    Matrix& mi = *m[i];
    Matrix& vi = *v[i];
    mi = cfg.adam_beta1 * mi + (1.0 - cfg.adam_beta1) * gi;
    vi = cfg.adam_beta2 * vi + (1.0 - cfg.adam_beta2) * gi.cwiseAbs2();
    p.array() -= cfg.learning_rate * (mi.array() / c1) / ((vi.array() / c2).sqrt() + cfg.adam_eps);
    ++i;
  });
  ++params.revision;
}

inline void add_grads(ModelParams& acc, const ModelParams& g, double scale) {
  std::vector<const Matrix*> src;
  g.for_each_tensor([&](const std::string&, const Matrix& t) { src.push_back(&t); });
  std::size_t i = 0;
  acc.for_each_tensor([&](const std::string&, Matrix& t) { t += scale * *src[i++]; });
}

/**
 * @brief A cloud with everything that depends only on geometry and colors:
 * neighbor table, both network inputs, pretext targets and local stats.
 */
struct PreparedScene {
  PointCloud cloud;
  SceneInput pretext_input;
  SceneInput seg_input;
  MatrixX2 ab_targets;
  LocalStats stats;
  std::vector<std::size_t> labeled;  ///< weak-label indices (fine-tuning only)
  std::vector<int> labeled_classes;
};

inline PreparedScene prepare_scene(const PointCloud& cloud, std::size_t k = SpatialIndex::kDefaultK,
                                   double epsilon = kDefaultStatsEpsilon) {
  const SpatialIndex index(cloud.positions());
  NeighborTable table = index.neighbor_table(k);
  PretextChannels ch = split_pretext_channels(cloud);
  PreparedScene s;
  s.cloud = cloud;
  s.stats = local_color_stats(ch.ab_targets, table, epsilon);
  s.ab_targets = std::move(ch.ab_targets);
  s.seg_input = prepare_input(segmentation_features(cloud), table);
  s.pretext_input = prepare_input(std::move(ch.input.features), std::move(table));
  return s;
}

inline void attach_weak_labels(PreparedScene& scene, const WeakLabelSet& weak) {
  for (auto i : weak.labeled_indices)
    if (i >= scene.cloud.size()) throw InvalidArgument("weak label index " + std::to_string(i) + " out of range");
  scene.labeled = weak.labeled_indices;
  scene.labeled_classes = weak.labels_from(scene.cloud);
}

namespace detail {

inline std::vector<std::size_t> sample_centers(std::size_t n, std::size_t count, SplitMix64& rng) {
  if (count == 0 || count >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto s = sample_without_replacement(n, count, rng);
  std::sort(s.begin(), s.end());
  return s;
}

inline std::vector<std::size_t> epoch_order(std::size_t scenes, SplitMix64& rng) {
  auto order = sample_without_replacement(scenes, scenes, rng);
  return order;
}

}  // namespace detail

/// Pooled mIoU of the segmentation head over fully labeled scenes.
inline double evaluate_miou(const ModelParams& params, std::span<const PreparedScene> scenes) {
  if (scenes.empty()) return std::numeric_limits<double>::quiet_NaN();
  ConfusionMatrix cm(params.num_classes);
  for (const auto& s : scenes) {
    const auto pred = argmax_rows(predict(params, s.seg_input).probs);
    cm += confusion(pred, s.cloud.labels(), params.num_classes);
  }
  return miou(cm).mean;
}

/// Self-supervised colorization pretraining; returns a pretext-head model.
inline std::pair<ModelParams, TrainHistory> train_pretext(std::span<const PreparedScene> scenes, const TrainConfig& cfg,
                                                          int num_classes) {
  cfg.validate();
  if (scenes.empty()) throw InvalidArgument("no training scenes");
  ModelParams params = init_params(Head::kPretext, std::max(2, num_classes), cfg.embedding_dim, cfg.hidden, cfg.seed);
  AdamState adam(params);
  SplitMix64 rng(cfg.seed ^ 0x70e7e47ULL);
  TrainHistory hist;
  for (int epoch = 0; epoch < cfg.max_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = detail::epoch_order(scenes.size(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch));
      ModelParams grads = params.zeros_like();
      const double share = 1.0 / static_cast<double>(end - pos);
      for (std::size_t q = pos; q < end; ++q) {
        const PreparedScene& s = scenes[order[q]];
        const auto centers = detail::sample_centers(s.cloud.size(), cfg.points_per_step, rng);
        const ForwardResult fr = forward(params, s.pretext_input, centers);
        const MatrixX2 targets = gather_rows(s.ab_targets, centers);
        const LossResult loss = loss_pretext(fr.outputs, targets, gather_stats(s.stats, centers));
        add_grads(grads, backward(params, fr.cache, loss.grad), share);
        loss_sum += loss.value;
        ++steps;
      }
      adam_step(params, grads, adam, cfg);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(1, steps)), 0.0, 0.0,
                           std::numeric_limits<double>::quiet_NaN(), secs});
  }
  return {std::move(params), std::move(hist)};
}

/**
 * @brief Weakly supervised fine-tuning.
 *
 * Per scene and step: segmentation forward on the labeled points plus a
 * random sample of unlabeled ones, cross entropy on the labeled rows and,
 * once lambda > 0, the propagation loss on the unlabeled rows with pseudo
 * labels recomputed from the current (detached) embeddings.
 */
inline std::pair<ModelParams, TrainHistory> train_weak(std::span<const PreparedScene> scenes, ModelParams init,
                                                       const TrainConfig& cfg,
                                                       std::span<const PreparedScene> validation = {}) {
  cfg.validate();
  if (scenes.empty()) throw InvalidArgument("no training scenes");
  if (init.head != Head::kSegmentation) throw InvalidArgument("fine-tuning needs a segmentation-head model");
  init.validate();
  ModelParams params = std::move(init);
  const int num_classes = params.num_classes;
  AdamState adam(params);
  SplitMix64 rng(cfg.seed ^ 0x3ea4ULL);
  TrainHistory hist;
  const std::size_t max_labeled = cfg.points_per_step == 0 ? std::numeric_limits<std::size_t>::max()
                                                           : std::max<std::size_t>(1, cfg.points_per_step / 2);
  for (int epoch = 0; epoch < cfg.max_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lambda = lambda_for(cfg, epoch);
    const auto order = detail::epoch_order(scenes.size(), rng);
    double seg_sum = 0.0, sp_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch));
      ModelParams grads = params.zeros_like();
      std::size_t used = 0;
      const double share = 1.0 / static_cast<double>(end - pos);
      for (std::size_t q = pos; q < end; ++q) {
        const PreparedScene& s = scenes[order[q]];
        if (s.labeled.empty()) {
          ++hist.skipped_steps;
          continue;
        }
        // Labeled rows first, then unlabeled rows.
        std::vector<std::size_t> centers;
        std::vector<int> classes;
        if (s.labeled.size() > max_labeled) {
          for (auto j : sample_without_replacement(s.labeled.size(), max_labeled, rng)) {
            centers.push_back(s.labeled[j]);
            classes.push_back(s.labeled_classes[j]);
          }
        } else {
          centers = s.labeled;
          classes = s.labeled_classes;
        }
        const std::size_t m = centers.size();
        std::vector<char> is_labeled(s.cloud.size(), 0);
        for (auto i : s.labeled) is_labeled[i] = 1;
        const std::size_t want = cfg.points_per_step == 0 ? s.cloud.size() : cfg.points_per_step;
        for (auto i : detail::sample_centers(s.cloud.size(), want, rng))
          if (!is_labeled[i] && centers.size() < std::max(want, m)) centers.push_back(i);

        const ForwardResult fr = forward(params, s.seg_input, centers);
        const auto mi = static_cast<Eigen::Index>(m);
        const auto nu = static_cast<Eigen::Index>(centers.size() - m);
        const LossResult seg = loss_seg(fr.outputs.topRows(mi), classes);
        Matrix grad = Matrix::Zero(fr.outputs.rows(), fr.outputs.cols());
        grad.topRows(mi) = seg.grad;
        seg_sum += seg.value;
        if (lambda > 0.0 && nu > 0) {
          const Matrix z_l = fr.z.topRows(mi);
          const Matrix z_u = fr.z.bottomRows(nu);
          const PseudoLabelSet pseudo = propagate(z_l, classes, z_u, num_classes, cfg.propagation);
          const SpLossResult sp = loss_sp(pseudo, fr.probs.bottomRows(nu));
          grad.bottomRows(nu) += lambda * sp.grad;
          sp_sum += sp.value;
          hist.clamped_logs += sp.clamped;
        }
        add_grads(grads, backward(params, fr.cache, grad), share);
        ++used;
        ++steps;
      }
      if (used > 0) adam_step(params, grads, adam, cfg);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_seg = steps ? seg_sum / static_cast<double>(steps) : 0.0;
    rec.loss_sp = steps ? sp_sum / static_cast<double>(steps) : 0.0;
    rec.lambda = lambda;
    if (!validation.empty() && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.max_epoch))
      rec.val_miou = evaluate_miou(params, validation);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(rec);
  }
  return {std::move(params), std::move(hist)};
}

/// "epoch,loss_seg,loss_sp,lambda,val_miou,seconds"; unvalidated epochs carry "nan".
inline std::string history_to_csv(const TrainHistory& h) {
  std::string s = "epoch,loss_seg,loss_sp,lambda,val_miou,seconds\n";
  for (const auto& r : h.epochs) {
    s += std::to_string(r.epoch) + "," + format_double(r.loss_seg) + "," + format_double(r.loss_sp) + "," +
         format_double(r.lambda) + "," + (std::isnan(r.val_miou) ? std::string("nan") : format_double(r.val_miou)) +
         "," + format_double(r.seconds) + "\n";
  }
  return s;
}

}  // namespace wsseg

#endif  // WSSEG_TRAINING_HPP
