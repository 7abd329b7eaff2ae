// wsseg - weakly supervised point cloud segmentation
//
// Synthetic labeled room scenes.
//
// Class 0 is the floor, class 1 the walls, and every further class is a set
// of boxes (even ids) or spheres (odd ids) standing on the floor. Surfaces are
// sampled with uniform density and every class carries a fixed base color,
// perturbed per point by Gaussian noise, so color correlates with class.

#ifndef WSSEG_CORE_SCENE_HPP
#define WSSEG_CORE_SCENE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wsseg/colorspace.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/types.hpp"

namespace wsseg {

struct SceneSpec {
  std::size_t num_points = 50000;
  int num_classes = 4;
  double extent = 10.0;       ///< side of the square floor, meters
  double color_noise = 0.05;  ///< per-channel std-dev in sRGB units
  std::uint64_t seed = 0;
};

inline constexpr double kMinClassColorDeltaE = 20.0;

/// Base sRGB color of every class; identical for all scenes with the same C.
inline std::vector<Vector3> class_base_colors(int num_classes) {
  static const std::array<std::array<double, 3>, 10> palette{{
      {0.55, 0.50, 0.45},  // floor
      {0.85, 0.82, 0.70},  // wall
      {0.75, 0.20, 0.15},
      {0.20, 0.35, 0.75},
      {0.25, 0.60, 0.25},
      {0.90, 0.80, 0.20},
      {0.55, 0.30, 0.65},
      {0.20, 0.70, 0.75},
      {0.95, 0.55, 0.15},
      {0.15, 0.15, 0.15},
  }};
  std::vector<Vector3> colors;
  std::vector<LabColor> labs;
  SplitMix64 rng(0x5eedc0105ULL);
  for (int c = 0; c < num_classes; ++c) {
    if (static_cast<std::size_t>(c) < palette.size()) {
      const auto& p = palette[static_cast<std::size_t>(c)];
      colors.emplace_back(p[0], p[1], p[2]);
      labs.push_back(rgb_to_lab(colors.back()));
      continue;
    }
    for (int attempt = 0;; ++attempt) {
      const Vector3 rgb(rng.uniform(), rng.uniform(), rng.uniform());
      const LabColor lab = rgb_to_lab(rgb);
      const bool ok = std::all_of(labs.begin(), labs.end(),
                                  [&](const LabColor& o) { return delta_e(lab, o) >= kMinClassColorDeltaE; });
      if (ok) {
        colors.push_back(rgb);
        labs.push_back(lab);
        break;
      }
      if (attempt > 100000) throw InvalidArgument("cannot find distinct colors for this many classes");
    }
  }
  return colors;
}

namespace detail {

struct Primitive {
  enum class Kind { kFloor, kWallX, kWallY, kBox, kSphere } kind;
  int label;
  Vector3 origin;  // floor/box corner or sphere center
  Vector3 size;    // box dims, sphere radius in size[0]
  double area;
};

inline Vector3 sample_surface(const Primitive& p, SplitMix64& rng) {
  using K = Primitive::Kind;
  switch (p.kind) {
    case K::kFloor:
      return p.origin + Vector3(rng.uniform() * p.size[0], rng.uniform() * p.size[1], 0.0);
    case K::kWallX:
      return p.origin + Vector3(0.0, rng.uniform() * p.size[1], rng.uniform() * p.size[2]);
    case K::kWallY:
      return p.origin + Vector3(rng.uniform() * p.size[0], 0.0, rng.uniform() * p.size[2]);
    case K::kBox: {
      const double sx = p.size[0], sy = p.size[1], sz = p.size[2];
      const double top = sx * sy, side_x = sy * sz, side_y = sx * sz;
      double t = rng.uniform() * (top + 2.0 * side_x + 2.0 * side_y);
      const double u = rng.uniform(), v = rng.uniform();
      if (t < top) return p.origin + Vector3(u * sx, v * sy, sz);
      t -= top;
      if (t < 2.0 * side_x) return p.origin + Vector3(t < side_x ? 0.0 : sx, u * sy, v * sz);
      t -= 2.0 * side_x;
      return p.origin + Vector3(u * sx, t < side_y ? 0.0 : sy, v * sz);
    }
    case K::kSphere: {
      Vector3 d(rng.normal(), rng.normal(), rng.normal());
      double n = d.norm();
      while (n < 1e-12) {
        d = Vector3(rng.normal(), rng.normal(), rng.normal());
        n = d.norm();
      }
      return p.origin + d * (p.size[0] / n);
    }
  }
  return p.origin;
}

}  // namespace detail

/// Deterministic per seed. Throws if num_points < num_classes or parameters are out of range.
inline PointCloud generate_scene(const SceneSpec& spec) {
  using detail::Primitive;
  if (spec.num_classes < 2) throw InvalidArgument("scene needs at least 2 classes");
  if (spec.num_points < static_cast<std::size_t>(spec.num_classes))
    throw InvalidArgument("num_points < num_classes");
  if (!(spec.extent > 0.0)) throw InvalidArgument("extent must be positive");
  if (!(spec.color_noise >= 0.0 && spec.color_noise <= 0.2))
    throw InvalidArgument("color_noise must lie in [0, 0.2]");

  SplitMix64 rng(spec.seed);
  const double e = spec.extent;
  const double wall_h = 0.3 * e;
  std::vector<Primitive> prims;
  prims.push_back({Primitive::Kind::kFloor, 0, Vector3::Zero(), Vector3(e, e, 0.0), e * e});
  prims.push_back({Primitive::Kind::kWallX, 1, Vector3::Zero(), Vector3(0.0, e, wall_h), e * wall_h});
  prims.push_back({Primitive::Kind::kWallY, 1, Vector3::Zero(), Vector3(e, 0.0, wall_h), e * wall_h});
  for (int c = 2; c < spec.num_classes; ++c) {
    const int instances = 2 + static_cast<int>(rng.below(3));
    for (int k = 0; k < instances; ++k) {
      if (c % 2 == 0) {
        const Vector3 size(rng.uniform(0.08, 0.18) * e, rng.uniform(0.08, 0.18) * e, rng.uniform(0.05, 0.15) * e);
        const Vector3 corner(rng.uniform(0.1, 0.9 - size[0] / e) * e, rng.uniform(0.1, 0.9 - size[1] / e) * e, 0.0);
        const double area = size[0] * size[1] + 2.0 * size[1] * size[2] + 2.0 * size[0] * size[2];
        prims.push_back({Primitive::Kind::kBox, c, corner, size, area});
      } else {
        const double r = rng.uniform(0.04, 0.08) * e;
        const Vector3 center(rng.uniform(0.1 * e + r, 0.9 * e - r), rng.uniform(0.1 * e + r, 0.9 * e - r), r);
        prims.push_back({Primitive::Kind::kSphere, c, center, Vector3(r, r, r), 4.0 * M_PI * r * r});
      }
    }
  }

  // Largest-remainder allocation proportional to area.
  double total_area = 0.0;
  for (const auto& p : prims) total_area += p.area;
  std::vector<std::size_t> counts(prims.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const double exact = static_cast<double>(spec.num_points) * prims[i].area / total_area;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spec.num_points; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];

  // Every class keeps at least one point; donors come from classes with spare points.
  std::vector<std::size_t> class_total(static_cast<std::size_t>(spec.num_classes), 0);
  for (std::size_t i = 0; i < prims.size(); ++i) class_total[static_cast<std::size_t>(prims[i].label)] += counts[i];
  for (int c = 0; c < spec.num_classes; ++c) {
    if (class_total[static_cast<std::size_t>(c)] > 0) continue;
    std::size_t first = prims.size();
    std::size_t donor = prims.size();
    for (std::size_t i = 0; i < prims.size(); ++i) {
      if (prims[i].label == c && first == prims.size()) first = i;
      if (counts[i] > 0 && class_total[static_cast<std::size_t>(prims[i].label)] > 1 &&
          (donor == prims.size() || counts[i] > counts[donor]))
        donor = i;
    }
    --counts[donor];
    --class_total[static_cast<std::size_t>(prims[donor].label)];
    ++counts[first];
    ++class_total[static_cast<std::size_t>(c)];
  }

  const auto base = class_base_colors(spec.num_classes);
  const auto n = static_cast<Eigen::Index>(spec.num_points);
  MatrixX3 positions(n, 3);
  MatrixX3 colors(n, 3);
  std::vector<int> labels(spec.num_points);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const Vector3& rgb = base[static_cast<std::size_t>(prims[i].label)];
    for (std::size_t j = 0; j < counts[i]; ++j, ++row) {
      positions.row(row) = detail::sample_surface(prims[i], rng).transpose();
      for (int ch = 0; ch < 3; ++ch) {
        const double noise = spec.color_noise > 0.0 ? spec.color_noise * rng.normal() : 0.0;
        colors(row, ch) = std::clamp(rgb[ch] + noise, 0.0, 1.0);
      }
      labels[static_cast<std::size_t>(row)] = prims[i].label;
    }
  }

  // Shuffle so that storage order carries no class information.
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i) + 1));
    positions.row(i).swap(positions.row(j));
    colors.row(i).swap(colors.row(j));
    std::swap(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
  }
  return PointCloud(std::move(positions), std::move(colors), std::move(labels), spec.num_classes);
}

}  // namespace wsseg

#endif  // WSSEG_CORE_SCENE_HPP
