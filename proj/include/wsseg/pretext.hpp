// wsseg - weakly supervised point cloud segmentation
//
// Colorization pretext task: neighborhood color statistics and the L1
// losses on predicted (a, b) and on predicted local statistics.
//
// Prediction rows are (a, b, mu_a, sigma_a, mu_b, sigma_b), all in the
// scaled chroma units of colorspace.hpp. Sums run sequentially in point
// order so results are bit-reproducible.

#ifndef WSSEG_PRETEXT_HPP
#define WSSEG_PRETEXT_HPP

#include <cmath>
#include <string>

#include "wsseg/core/spatial_index.hpp"
#include "wsseg/core/types.hpp"

namespace wsseg {

inline constexpr double kDefaultStatsEpsilon = 1e-8;

/// Column layout of a pretext prediction row.
enum PretextColumn : int { kColA = 0, kColB, kColMuA, kColSigmaA, kColMuB, kColSigmaB, kPretextOutputs };

struct LocalStats {
  Eigen::VectorXd mu_a, sigma_a, mu_b, sigma_b;

  std::size_t size() const { return static_cast<std::size_t>(mu_a.size()); }

  /// Rows (mu_a, sigma_a, mu_b, sigma_b), matching prediction columns 2..5.
  Matrix as_matrix() const {
    Matrix m(mu_a.size(), 4);
    m.col(0) = mu_a;
    m.col(1) = sigma_a;
    m.col(2) = mu_b;
    m.col(3) = sigma_b;
    return m;
  }
};

/// Mean and sqrt(population variance + epsilon) of a and b over each row of @p neighbors.
inline LocalStats local_color_stats(const MatrixX2& ab, const NeighborTable& neighbors,
                                    double epsilon = kDefaultStatsEpsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (neighbors.rows() != static_cast<std::size_t>(ab.rows()))
    throw InvalidArgument("neighbor table does not match target count");
  const auto n = ab.rows();
  const auto k = static_cast<double>(neighbors.k());
  LocalStats s{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto nb = neighbors.row(static_cast<std::size_t>(i));
    double sa = 0.0, sb = 0.0;
    for (auto j : nb) {
      sa += ab(j, 0);
      sb += ab(j, 1);
    }
    const double ma = sa / k, mb = sb / k;
    double va = 0.0, vb = 0.0;
    for (auto j : nb) {
      va += (ab(j, 0) - ma) * (ab(j, 0) - ma);
      vb += (ab(j, 1) - mb) * (ab(j, 1) - mb);
    }
    s.mu_a[i] = ma;
    s.mu_b[i] = mb;
    s.sigma_a[i] = std::sqrt(va / k + epsilon);
    s.sigma_b[i] = std::sqrt(vb / k + epsilon);
  }
  return s;
}

/// Neighborhoods of size K (self included) taken from @p index. Requires K <= N.
inline LocalStats local_color_stats(const MatrixX2& ab, const SpatialIndex& index, std::size_t k,
                                    double epsilon = kDefaultStatsEpsilon) {
  if (k == 0) throw InvalidArgument("K must be positive");
  if (k > index.size())
    throw InvalidArgument("K = " + std::to_string(k) + " exceeds point count " + std::to_string(index.size()));
  return local_color_stats(ab, index.neighbor_table(k), epsilon);
}

namespace detail {

inline double l1_sign(double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }

inline void check_prediction(const Matrix& pred, Eigen::Index n) {
  if (pred.cols() != kPretextOutputs) throw InvalidArgument("pretext prediction must have 6 columns");
  if (pred.rows() != n) throw InvalidArgument("prediction/target row count mismatch");
}

}  // namespace detail

/// (1/2N) sum |a - a_hat| + |b - b_hat|; gradient nonzero only in columns 0 and 1.
inline LossResult loss_ab(const Matrix& pred, const MatrixX2& targets) {
  detail::check_prediction(pred, targets.rows());
  const auto n = pred.rows();
  LossResult out{0.0, Matrix::Zero(n, kPretextOutputs)};
  if (n == 0) return out;
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 2; ++c) {
      const double r = targets(i, c) - pred(i, c);
      sum += std::abs(r);
      out.grad(i, c) = -detail::l1_sign(r) * scale;
    }
  }
  out.value = sum * scale;
  return out;
}

/// (1/4N) sum over the four statistic channels of the L1 error.
inline LossResult loss_local(const Matrix& pred, const LocalStats& stats) {
  const auto n = pred.rows();
  detail::check_prediction(pred, static_cast<Eigen::Index>(stats.size()));
  LossResult out{0.0, Matrix::Zero(n, kPretextOutputs)};
  if (n == 0) return out;
  const double scale = 1.0 / (4.0 * static_cast<double>(n));
  const Eigen::VectorXd* truth[4] = {&stats.mu_a, &stats.sigma_a, &stats.mu_b, &stats.sigma_b};
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 4; ++c) {
      const double r = (*truth[c])[i] - pred(i, kColMuA + c);
      sum += std::abs(r);
      out.grad(i, kColMuA + c) = -detail::l1_sign(r) * scale;
    }
  }
  out.value = sum * scale;
  return out;
}

/// loss_ab + loss_local.
inline LossResult loss_pretext(const Matrix& pred, const MatrixX2& targets, const LocalStats& stats) {
  LossResult ab = loss_ab(pred, targets);
  LossResult local = loss_local(pred, stats);
  ab.value += local.value;
  ab.grad += local.grad;
  return ab;
}

/// Restriction of @p stats to the listed rows.
template <typename IndexRange>
LocalStats gather_stats(const LocalStats& stats, const IndexRange& rows) {
  const auto n = static_cast<Eigen::Index>(std::size(rows));
  LocalStats out{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  Eigen::Index r = 0;
  for (auto i : rows) {
    const auto j = static_cast<Eigen::Index>(i);
    out.mu_a[r] = stats.mu_a[j];
    out.sigma_a[r] = stats.sigma_a[j];
    out.mu_b[r] = stats.mu_b[j];
    out.sigma_b[r] = stats.sigma_b[j];
    ++r;
  }
  return out;
}

}  // namespace wsseg

#endif  // WSSEG_PRETEXT_HPP
