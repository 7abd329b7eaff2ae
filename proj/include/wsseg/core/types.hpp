// wsseg - weakly supervised point cloud segmentation
//
// Basic matrix aliases, error types and the PointCloud value type.

#ifndef WSSEG_CORE_TYPES_HPP
#define WSSEG_CORE_TYPES_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wsseg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixX3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatrixX2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector3 = Eigen::Vector3d;

/// Label value marking a point without ground truth.
inline constexpr int kUnlabeled = -1;

/// Thrown when an input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an external file cannot be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Labeled gradient/value pair returned by every differentiable loss.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

/**
 * @brief Colored point set with optional per-point class labels.
 *
 * Immutable once constructed; the constructor enforces that all per-point
 * arrays agree in length, that colors lie in [0,1] and that labels are either
 * kUnlabeled or inside [0, num_classes).
 */
class PointCloud {
 public:
  PointCloud() = default;

  PointCloud(MatrixX3 positions, MatrixX3 colors, std::optional<std::vector<int>> labels,
             int num_classes)
      : positions_(std::move(positions)),
        colors_(std::move(colors)),
        labels_(std::move(labels)),
        num_classes_(num_classes) {
    validate();
  }

  std::size_t size() const { return static_cast<std::size_t>(positions_.rows()); }
  bool empty() const { return size() == 0; }

  const MatrixX3& positions() const { return positions_; }
  const MatrixX3& colors() const { return colors_; }
  bool has_labels() const { return labels_.has_value(); }
  const std::vector<int>& labels() const {
    if (!labels_) throw InvalidArgument("point cloud has no labels");
    return *labels_;
  }
  int num_classes() const { return num_classes_; }

  Vector3 position(std::size_t i) const { return positions_.row(static_cast<Eigen::Index>(i)).transpose(); }
  Vector3 color(std::size_t i) const { return colors_.row(static_cast<Eigen::Index>(i)).transpose(); }

  PointCloud without_labels() const { return PointCloud(positions_, colors_, std::nullopt, num_classes_); }
  PointCloud with_colors(MatrixX3 colors) const {
    return PointCloud(positions_, std::move(colors), labels_, num_classes_);
  }
  PointCloud with_labels(std::vector<int> labels) const {
    return PointCloud(positions_, colors_, std::move(labels), num_classes_);
  }

 private:
  void validate() const {
    if (num_classes_ < 1) throw InvalidArgument("num_classes must be positive");
    if (colors_.rows() != positions_.rows())
      throw InvalidArgument("colors length " + std::to_string(colors_.rows()) +
                            " differs from positions length " + std::to_string(positions_.rows()));
    if (labels_ && labels_->size() != size())
      throw InvalidArgument("labels length " + std::to_string(labels_->size()) +
                            " differs from positions length " + std::to_string(size()));
    for (Eigen::Index i = 0; i < colors_.rows(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const double v = colors_(i, c);
        if (!(v >= 0.0 && v <= 1.0))
          throw InvalidArgument("color of point " + std::to_string(i) + " outside [0,1]");
      }
    }
    if (labels_) {
      for (std::size_t i = 0; i < labels_->size(); ++i) {
        const int l = (*labels_)[i];
        if (l != kUnlabeled && (l < 0 || l >= num_classes_))
          throw InvalidArgument("label " + std::to_string(l) + " of point " + std::to_string(i) +
                                " outside [0," + std::to_string(num_classes_) + ")");
      }
    }
  }

  MatrixX3 positions_;
  MatrixX3 colors_;
  std::optional<std::vector<int>> labels_;
  int num_classes_ = 1;
};

/// Copies the listed rows of @p m into a new matrix, in order.
template <typename Derived, typename IndexRange>
Matrix gather_rows(const Eigen::MatrixBase<Derived>& m, const IndexRange& rows) {
  Matrix out(static_cast<Eigen::Index>(std::size(rows)), m.cols());
  Eigen::Index r = 0;
  for (auto i : rows) out.row(r++) = m.row(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace wsseg

#endif  // WSSEG_CORE_TYPES_HPP
