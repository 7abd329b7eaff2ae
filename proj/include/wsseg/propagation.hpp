// wsseg - weakly supervised point cloud segmentation
//
// Sparse label propagation through class prototypes.
//
//   prototypes  rho_c = mean of labeled embeddings of class c
//   similarity  W[i][c] = exp(-|z_i - rho_c|^2 / sigma)
//   assignment  S = row-wise softmax of W
//   top-K mask  per class column, the k_top rows with the largest S
//   point mask  rows selected by at least one class; the chosen class is the
//               selecting class with the largest S
//   pseudo labels  full S rows of masked points (soft one-hot)
//
// Everything runs in O(N C d) time with O(N C) auxiliary memory. Classes
// without any labeled point get no prototype and no column.
//
// dense_graph_propagation() is a fully connected graph reference kept only
// for complexity comparisons; it is O((N+M)^2 d) and refuses N > 20000.

#ifndef WSSEG_PROPAGATION_HPP
#define WSSEG_PROPAGATION_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsseg/core/types.hpp"

namespace wsseg {

struct PropagationConfig {
  std::optional<double> sigma;  ///< unset: adaptive bandwidth, see adaptive_sigma()
  std::size_t k_top = 32;
};

struct Prototypes {
  Matrix rho;                 ///< C x d; rows of absent classes are zero
  std::vector<bool> present;  ///< class has at least one labeled point

  std::vector<int> present_classes() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < present.size(); ++c)
      if (present[c]) out.push_back(static_cast<int>(c));
    return out;
  }
};

/// Boolean N x C_present matrix, row-major.
class TopKMask {
 public:
  TopKMask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t c) const { return data_[i * cols_ + c] != 0; }
  void set(std::size_t i, std::size_t c) { data_[i * cols_ + c] = 1; }
  std::size_t count_column(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows_; ++i) n += data_[i * cols_ + c];
    return n;
  }

 private:
  std::size_t rows_, cols_;
  std::vector<unsigned char> data_;
};

struct PointMask {
  std::vector<bool> mask;           ///< M^pt
  std::vector<int> chosen_column;   ///< column of S chosen per row, -1 when unmasked
};

struct PseudoLabel {
  std::size_t index;          ///< row in Z_u
  int chosen_class;
  std::vector<double> probs;  ///< length C, zero for absent classes
};

struct PseudoLabelSet {
  std::vector<bool> point_mask;
  std::vector<PseudoLabel> labels;  ///< ascending index, one per masked point
  int num_classes = 0;
  double sigma = 0.0;  ///< bandwidth actually used

  std::size_t num_masked() const { return labels.size(); }
};

inline Prototypes compute_prototypes(const Matrix& z_labeled, std::span<const int> labels, int num_classes) {
  if (z_labeled.rows() == 0 || labels.empty()) throw InvalidArgument("no labeled points");
  if (static_cast<std::size_t>(z_labeled.rows()) != labels.size())
    throw InvalidArgument("labeled embeddings and labels differ in length");
  if (num_classes < 1) throw InvalidArgument("num_classes must be positive");
  Prototypes p{Matrix::Zero(num_classes, z_labeled.cols()), std::vector<bool>(static_cast<std::size_t>(num_classes), false)};
  std::vector<std::size_t> count(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes) throw InvalidArgument("label " + std::to_string(c) + " out of range");
    p.rho.row(c) += z_labeled.row(static_cast<Eigen::Index>(i));
    ++count[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < num_classes; ++c) {
    const auto n = count[static_cast<std::size_t>(c)];
    if (n == 0) continue;
    p.rho.row(c) /= static_cast<double>(n);
    p.present[static_cast<std::size_t>(c)] = true;
  }
  return p;
}

/**
 * @brief Mean nearest-prototype squared distance over a strided sample of up
 * to 1024 unlabeled rows. Falls back to 1 when that mean vanishes.
 */
inline double adaptive_sigma(const Matrix& z_unlabeled, const Prototypes& protos) {
  const auto classes = protos.present_classes();
  if (classes.empty()) throw InvalidArgument("no present class");
  const auto n = static_cast<std::size_t>(z_unlabeled.rows());
  if (n == 0) return 1.0;
  const std::size_t samples = std::min<std::size_t>(1024, n);
  double sum = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto i = static_cast<Eigen::Index>(s * n / samples);
    double best = std::numeric_limits<double>::infinity();
    for (int c : classes) best = std::min(best, (z_unlabeled.row(i) - protos.rho.row(c)).squaredNorm());
    sum += best;
  }
  const double mean = sum / static_cast<double>(samples);
  return mean > 1e-12 ? mean : 1.0;
}

/// N x C_present similarity, columns in ascending class order.
inline Matrix similarity_matrix(const Matrix& z_unlabeled, const Prototypes& protos, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  const auto classes = protos.present_classes();
  if (classes.empty()) throw InvalidArgument("no present class");
  if (z_unlabeled.cols() != protos.rho.cols()) throw InvalidArgument("embedding dimension mismatch");
  const auto n = z_unlabeled.rows();
  Matrix w(n, static_cast<Eigen::Index>(classes.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < classes.size(); ++c)
      w(i, static_cast<Eigen::Index>(c)) = std::exp(-(z_unlabeled.row(i) - protos.rho.row(classes[c])).squaredNorm() / sigma);
  }
  return w;
}

/// Row-wise softmax.
inline Matrix class_assignment(const Matrix& w) {
  Matrix s(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double m = w.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) total += (s(i, c) = std::exp(w(i, c) - m));
    s.row(i) /= total;
  }
  return s;
}

/// Per column, the min(k_top, N) rows with the largest S (ties to the lower row).
inline TopKMask topk_mask(const Matrix& s, std::size_t k_top) {
  if (k_top == 0) throw InvalidArgument("k_top must be positive");
  const auto n = static_cast<std::size_t>(s.rows());
  const auto cols = static_cast<std::size_t>(s.cols());
  TopKMask mask(n, cols);
  const std::size_t k = std::min(k_top, n);
  if (k == 0) return mask;
  std::vector<std::uint32_t> order(n);
  for (std::size_t c = 0; c < cols; ++c) {
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    const auto col = static_cast<Eigen::Index>(c);
    auto better = [&](std::uint32_t a, std::uint32_t b) {
      const double va = s(a, col), vb = s(b, col);
      return va > vb || (va == vb && a < b);
    };
    if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), better);
    for (std::size_t j = 0; j < k; ++j) mask.set(order[j], c);
  }
  return mask;
}

inline PointMask point_mask(const TopKMask& mk, const Matrix& s) {
  if (static_cast<std::size_t>(s.rows()) != mk.rows() || static_cast<std::size_t>(s.cols()) != mk.cols())
    throw InvalidArgument("mask and assignment shapes differ");
  PointMask out{std::vector<bool>(mk.rows(), false), std::vector<int>(mk.rows(), -1)};
  for (std::size_t i = 0; i < mk.rows(); ++i) {
    int best = -1;
    for (std::size_t c = 0; c < mk.cols(); ++c) {
      if (!mk(i, c)) continue;
      if (best < 0 || s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) > s(static_cast<Eigen::Index>(i), best))
        best = static_cast<int>(c);
    }
    if (best >= 0) {
      out.mask[i] = true;
      out.chosen_column[i] = best;
    }
  }
  return out;
}

/// Y^p = M^pt (.) S, expanded from present-class columns to all C classes.
inline PseudoLabelSet sparse_pseudo_labels(const PointMask& pm, const Matrix& s,
                                           std::span<const int> column_classes, int num_classes) {
  if (pm.mask.size() != static_cast<std::size_t>(s.rows()) || column_classes.size() != static_cast<std::size_t>(s.cols()))
    throw InvalidArgument("point mask and assignment shapes differ");
  PseudoLabelSet out;
  out.point_mask = pm.mask;
  out.num_classes = num_classes;
  for (std::size_t i = 0; i < pm.mask.size(); ++i) {
    if (!pm.mask[i]) continue;
    PseudoLabel pl{i, column_classes[static_cast<std::size_t>(pm.chosen_column[i])],
                   std::vector<double>(static_cast<std::size_t>(num_classes), 0.0)};
    for (std::size_t c = 0; c < column_classes.size(); ++c)
      pl.probs[static_cast<std::size_t>(column_classes[c])] = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    out.labels.push_back(std::move(pl));
  }
  return out;
}

inline PseudoLabelSet propagate(const Matrix& z_labeled, std::span<const int> labels, const Matrix& z_unlabeled,
                                int num_classes, const PropagationConfig& config = {}) {
  const Prototypes protos = compute_prototypes(z_labeled, labels, num_classes);
  const double sigma = config.sigma ? *config.sigma : adaptive_sigma(z_unlabeled, protos);
  const Matrix s = class_assignment(similarity_matrix(z_unlabeled, protos, sigma));
  const TopKMask mk = topk_mask(s, config.k_top);
  const auto classes = protos.present_classes();
  PseudoLabelSet out = sparse_pseudo_labels(point_mask(mk, s), s, classes, num_classes);
  out.sigma = sigma;
  return out;
}

struct SpLossResult : LossResult {
  std::size_t clamped = 0;  ///< masked (i, c) entries whose log argument hit the 1e-12 floor
};

inline constexpr double kLogClamp = 1e-12;

/**
 * @brief Soft-target cross entropy over masked points.
 *
 * grad is with respect to the pre-softmax logits: (y^u - y^p) / |M^pt| on
 * masked rows, zero elsewhere. Pseudo labels are constants.
 */
inline SpLossResult loss_sp(const PseudoLabelSet& pseudo, const Matrix& probs) {
  if (pseudo.point_mask.size() != static_cast<std::size_t>(probs.rows()))
    throw InvalidArgument("pseudo labels and predictions differ in length");
  SpLossResult out;
  out.grad = Matrix::Zero(probs.rows(), probs.cols());
  if (pseudo.labels.empty()) return out;
  if (probs.cols() != pseudo.num_classes) throw InvalidArgument("class count mismatch");
  const double inv = 1.0 / static_cast<double>(pseudo.labels.size());
  double sum = 0.0;
  for (const auto& pl : pseudo.labels) {
    const auto i = static_cast<Eigen::Index>(pl.index);
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double y = pl.probs[static_cast<std::size_t>(c)];
      double p = probs(i, c);
      if (y > 0.0) {
        if (p < kLogClamp) {
          p = kLogClamp;
          ++out.clamped;
        }
        sum -= y * std::log(p);
      }
      out.grad(i, c) = (probs(i, c) - y) * inv;
    }
  }
  out.value = sum * inv;
  return out;
}

inline constexpr std::size_t kDenseGraphMaxPoints = 20000;

/**
 * @brief Fully connected graph label spreading (reference baseline).
 *
 * Affinities exp(-|z_i - z_j|^2 / sigma) between all M+N nodes are
 * recomputed on the fly, so memory stays linear while time is quadratic.
 * Returns the row-normalized class distribution of the N unlabeled nodes.
 */
inline Matrix dense_graph_propagation(const Matrix& z_labeled, std::span<const int> labels, const Matrix& z_unlabeled,
                                      int num_classes, double sigma, int iterations = 1, double alpha = 0.99) {
  if (static_cast<std::size_t>(z_unlabeled.rows()) > kDenseGraphMaxPoints)
    throw InvalidArgument("dense graph reference refuses N > " + std::to_string(kDenseGraphMaxPoints));
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  const auto m = z_labeled.rows();
  const auto total = m + z_unlabeled.rows();
  Matrix z(total, z_labeled.cols());
  z.topRows(m) = z_labeled;
  z.bottomRows(z_unlabeled.rows()) = z_unlabeled;
  Matrix y0 = Matrix::Zero(total, num_classes);
  for (Eigen::Index i = 0; i < m; ++i) y0(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  auto affinity = [&](Eigen::Index i, Eigen::Index j) { return std::exp(-(z.row(i) - z.row(j)).squaredNorm() / sigma); };
  Eigen::VectorXd inv_sqrt_degree(total);
  for (Eigen::Index i = 0; i < total; ++i) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < total; ++j)
      if (j != i) d += affinity(i, j);
    inv_sqrt_degree[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix f = y0;
  Matrix next(total, num_classes);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < total; ++i) {
      RowVector acc = RowVector::Zero(num_classes);
      for (Eigen::Index j = 0; j < total; ++j)
        if (j != i) acc += (affinity(i, j) * inv_sqrt_degree[j]) * f.row(j);
      next.row(i) = alpha * inv_sqrt_degree[i] * acc + (1.0 - alpha) * y0.row(i);
    }
    f.swap(next);
  }
  Matrix out = f.bottomRows(z_unlabeled.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

}  // namespace wsseg

#endif  // WSSEG_PROPAGATION_HPP
