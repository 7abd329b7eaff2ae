// wsseg - weakly supervised point cloud segmentation
//
// Confusion matrix, per-class IoU, mean IoU and overall accuracy.

#ifndef WSSEG_METRICS_HPP
#define WSSEG_METRICS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsseg/core/types.hpp"

namespace wsseg {

/// counts[gt][pred]; mergeable by addition.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(int c = 0) : num_classes(c), counts(static_cast<std::size_t>(c) * static_cast<std::size_t>(c), 0) {}

  std::uint64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt * num_classes + pred)]; }
  std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt * num_classes + pred)]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.num_classes != num_classes) throw InvalidArgument("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
};

/// Points whose ground truth is kUnlabeled are skipped.
inline ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  if (pred.size() != gt.size()) throw InvalidArgument("prediction and ground truth differ in length");
  if (num_classes < 1) throw InvalidArgument("num_classes must be positive");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kUnlabeled) continue;
    if (gt[i] < 0 || gt[i] >= num_classes)
      throw InvalidArgument("ground-truth class " + std::to_string(gt[i]) + " out of range at point " + std::to_string(i));
    if (pred[i] < 0 || pred[i] >= num_classes)
      throw InvalidArgument("predicted class " + std::to_string(pred[i]) + " out of range at point " + std::to_string(i));
    ++cm.at(gt[i], pred[i]);
  }
  return cm;
}

struct IoUReport {
  std::vector<double> per_class;  ///< 0 for classes without support
  std::vector<bool> supported;    ///< class appears in ground truth or prediction
  double mean = 0.0;              ///< over supported classes; 0 if none
};

inline IoUReport miou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  IoUReport r{std::vector<double>(static_cast<std::size_t>(c), 0.0), std::vector<bool>(static_cast<std::size_t>(c), false), 0.0};
  int used = 0;
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.per_class[static_cast<std::size_t>(k)] = static_cast<double>(tp) / static_cast<double>(denom);
    r.supported[static_cast<std::size_t>(k)] = true;
    sum += r.per_class[static_cast<std::size_t>(k)];
    ++used;
  }
  r.mean = used > 0 ? sum / used : 0.0;
  return r;
}

inline double oa(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) return 0.0;
  std::uint64_t diag = 0;
  for (int k = 0; k < cm.num_classes; ++k) diag += cm.at(k, k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

/// {"per_class_iou": [...], "miou": x, "oa": x, "num_points": n, "support": [...]}
inline nlohmann::json metrics_report(const ConfusionMatrix& cm) {
  const IoUReport r = miou(cm);
  std::vector<std::uint64_t> support(static_cast<std::size_t>(cm.num_classes), 0);
  for (int g = 0; g < cm.num_classes; ++g)
    for (int p = 0; p < cm.num_classes; ++p) support[static_cast<std::size_t>(g)] += cm.at(g, p);
  return {{"per_class_iou", r.per_class}, {"miou", r.mean}, {"oa", oa(cm)}, {"num_points", cm.total()}, {"support", support}};
}

}  // namespace wsseg

#endif  // WSSEG_METRICS_HPP
