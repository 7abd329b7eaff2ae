// wsseg - weakly supervised point cloud segmentation
//
// Exact k-nearest-neighbor search over 3D positions.
//
// Results are identical to an exhaustive scan: neighbors come back ordered
// by (squared distance, point index), so equidistant points are reported
// lower index first. A query point that is itself a member of the cloud is
// part of its own neighborhood.
//
//   SpatialIndex index(cloud.positions());
//   auto nn = index.knn(cloud.position(0), 16);
//   NeighborTable table = index.neighbor_table(16);

#ifndef WSSEG_CORE_SPATIAL_INDEX_HPP
#define WSSEG_CORE_SPATIAL_INDEX_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsseg/core/types.hpp"

namespace wsseg {

/// Row-major N x k table of neighbor indices (row i = knn of point i).
class NeighborTable {
 public:
  NeighborTable() = default;
  NeighborTable(std::size_t rows, std::size_t k) : rows_(rows), k_(k), data_(rows * k) {}

  std::size_t rows() const { return rows_; }
  std::size_t k() const { return k_; }
  std::span<const std::int32_t> row(std::size_t i) const { return {data_.data() + i * k_, k_}; }
  std::span<std::int32_t> row(std::size_t i) { return {data_.data() + i * k_, k_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t k_ = 0;
  std::vector<std::int32_t> data_;
};

struct Neighbor {
  std::size_t index;
  double squared_distance;
};

/**
 * @brief Static kd-tree answering exact KNN and fixed-radius queries.
 *
 * Immutable after construction; concurrent queries are safe.
 */
class SpatialIndex {
 public:
  static constexpr std::size_t kDefaultK = 16;

  explicit SpatialIndex(const MatrixX3& positions, std::size_t leaf_size = 12)
      : points_(positions), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    if (points_.rows() == 0) throw InvalidArgument("cannot index an empty point set");
    for (Eigen::Index i = 0; i < points_.rows(); ++i) {
      if (!points_.row(i).allFinite())
        throw InvalidArgument("non-finite coordinate at point " + std::to_string(i));
    }
    order_.resize(size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(2 * size() / leaf_size_ + 1);
    build(0, size());
  }

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  const MatrixX3& positions() const { return points_; }

  /// min(k, N) nearest neighbors of @p query with their squared distances.
  std::vector<Neighbor> knn_search(const Vector3& query, std::size_t k) const {
    if (k == 0) throw InvalidArgument("knn requires k >= 1");
    k = std::min(k, size());
    std::vector<Candidate> heap;
    heap.reserve(k);
    search(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<Neighbor> out;
    out.reserve(heap.size());
    for (const auto& c : heap) out.push_back({c.index, c.d2});
    return out;
  }

  std::vector<std::size_t> knn(const Vector3& query, std::size_t k) const {
    std::vector<std::size_t> out;
    for (const auto& n : knn_search(query, k)) out.push_back(n.index);
    return out;
  }

  /// All points with Euclidean distance <= radius, ascending index.
  std::vector<std::size_t> radius_search(const Vector3& query, double radius) const {
    std::vector<std::size_t> out;
    if (radius < 0.0) return out;
    radius_impl(0, query, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// KNN of every indexed point (self included), k clamped to N.
  NeighborTable neighbor_table(std::size_t k = kDefaultK) const {
    if (k == 0) throw InvalidArgument("knn requires k >= 1");
    k = std::min(k, size());
    NeighborTable table(size(), k);
    std::vector<Candidate> heap;
    heap.reserve(k);
    for (std::size_t i = 0; i < size(); ++i) {
      heap.clear();
      search(0, points_.row(static_cast<Eigen::Index>(i)).transpose(), k, heap);
      std::sort_heap(heap.begin(), heap.end());
      auto row = table.row(i);
      for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<std::int32_t>(heap[j].index);
    }
    return table;
  }

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;  // -1 for leaves
    std::int32_t right = -1;
    int dim = 0;
    double split = 0.0;
  };

  struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
  };

  double squared_distance(const Vector3& q, std::size_t i) const {
    const auto p = points_.row(static_cast<Eigen::Index>(i));
    const double dx = q[0] - p[0];
    const double dy = q[1] - p[1];
    const double dz = q[2] - p[2];
    return dx * dx + dy * dy + dz * dz;
  }

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
    if (end - begin <= leaf_size_) return id;

    Vector3 lo = Vector3::Constant(std::numeric_limits<double>::infinity());
    Vector3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const Vector3 p = points_.row(order_[i]).transpose();
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    if (hi[dim] == lo[dim]) return id;  // all coincident: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    auto key_less = [&](std::uint32_t a, std::uint32_t b) {
      const double ca = points_(a, dim);
      const double cb = points_(b, dim);
      return ca < cb || (ca == cb && a < b);
    };
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), key_less);
    const double split = points_(order_[mid], dim);
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.dim = dim;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
  }

  // Left subtree coordinates are <= split and right subtree coordinates are >= split
  // along node.dim, so |query - split| bounds the distance to the far side.
  void search(std::int32_t id, const Vector3& q, std::size_t k, std::vector<Candidate>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Candidate c{squared_distance(q, order_[i]), order_[i]};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = q[node.dim] - node.split;
    const std::int32_t near = diff <= 0.0 ? node.left : node.right;
    const std::int32_t far = diff <= 0.0 ? node.right : node.left;
    search(near, q, k, heap);
    // Equal bound may still hold a lower-index tie, so prune strictly.
    if (heap.size() < k || diff * diff <= heap.front().d2) search(far, q, k, heap);
  }

  void radius_impl(std::int32_t id, const Vector3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i)
        if (squared_distance(q, order_[i]) <= r2) out.push_back(order_[i]);
      return;
    }
    const double diff = q[node.dim] - node.split;
    if (diff <= 0.0 || diff * diff <= r2) radius_impl(node.left, q, r2, out);
    if (diff >= 0.0 || diff * diff <= r2) radius_impl(node.right, q, r2, out);
  }

  MatrixX3 points_;
  std::size_t leaf_size_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace wsseg

#endif  // WSSEG_CORE_SPATIAL_INDEX_HPP
