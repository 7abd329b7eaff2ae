// wsseg - weakly supervised point cloud segmentation
//
// Weak annotation regimes drawn from a fully labeled cloud: one point per
// class (1pt), a random fraction of points (x%), and super-point regions
// (SPT) where every point inside a ball around a random seed keeps its own
// ground truth.

#ifndef WSSEG_WEAKLABEL_HPP
#define WSSEG_WEAKLABEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wsseg/core/io.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/spatial_index.hpp"
#include "wsseg/core/types.hpp"

namespace wsseg {

enum class WeakScheme { kOnePoint, kFraction, kSuperpoint };

struct WeakLabelSet {
  std::vector<std::size_t> labeled_indices;  ///< strictly increasing
  WeakScheme scheme = WeakScheme::kOnePoint;
  double fraction = 0.0;        ///< kFraction only
  std::size_t num_regions = 0;  ///< kSuperpoint only
  double radius = 0.0;          ///< kSuperpoint only
  std::uint64_t seed = 0;

  std::size_t size() const { return labeled_indices.size(); }

  /// Ground-truth classes of the labeled points, in index order.
  std::vector<int> labels_from(const PointCloud& cloud) const {
    const auto& gt = cloud.labels();
    std::vector<int> out;
    out.reserve(labeled_indices.size());
    for (auto i : labeled_indices) out.push_back(gt.at(i));
    return out;
  }
};

inline constexpr double kDefaultSuperpointRadius = 0.5;

namespace detail {

inline const std::vector<int>& require_labels(const PointCloud& cloud) {
  if (!cloud.has_labels()) throw InvalidArgument("weak labels require a fully labeled cloud");
  return cloud.labels();
}

}  // namespace detail

/// One uniformly chosen point of every class present in the cloud.
inline WeakLabelSet sample_one_point(const PointCloud& cloud, std::uint64_t seed) {
  const auto& gt = detail::require_labels(cloud);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(cloud.num_classes()));
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] != kUnlabeled) members[static_cast<std::size_t>(gt[i])].push_back(i);
  SplitMix64 rng(seed);
  WeakLabelSet out;
  out.scheme = WeakScheme::kOnePoint;
  out.seed = seed;
  for (const auto& m : members) {
    if (m.empty()) continue;
    out.labeled_indices.push_back(m[rng.below(m.size())]);
  }
  std::sort(out.labeled_indices.begin(), out.labeled_indices.end());
  return out;
}

/// ceil(fraction * N) points drawn uniformly without replacement.
inline WeakLabelSet sample_fraction(const PointCloud& cloud, double fraction, std::uint64_t seed) {
  detail::require_labels(cloud);
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
  const double n = static_cast<double>(cloud.size());
  // Guard against products like 0.01 * 50000 = 500.00000000000006.
  const auto count = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9 * std::max(1.0, n)));
  if (count < 1) throw InvalidArgument("fraction * N must be at least 1");
  SplitMix64 rng(seed);
  WeakLabelSet out;
  out.scheme = WeakScheme::kFraction;
  out.fraction = fraction;
  out.seed = seed;
  out.labeled_indices = sample_without_replacement(cloud.size(), count, rng);
  std::sort(out.labeled_indices.begin(), out.labeled_indices.end());
  return out;
}

/// Union of the radius balls around num_regions distinct random seed points.
inline WeakLabelSet sample_superpoint(const PointCloud& cloud, const SpatialIndex& index,
                                      std::size_t num_regions, double radius, std::uint64_t seed) {
  detail::require_labels(cloud);
  if (cloud.empty()) throw InvalidArgument("cannot annotate an empty cloud");
  if (index.size() != cloud.size()) throw InvalidArgument("index does not match cloud");
  if (!(radius > 0.0)) throw InvalidArgument("radius must be positive");
  if (num_regions == 0) throw InvalidArgument("num_regions must be positive");
  SplitMix64 rng(seed);
  std::vector<char> chosen(cloud.size(), 0);
  for (auto s : sample_without_replacement(cloud.size(), num_regions, rng)) {
    for (auto j : index.radius_search(cloud.position(s), radius)) chosen[j] = 1;
  }
  WeakLabelSet out;
  out.scheme = WeakScheme::kSuperpoint;
  out.num_regions = num_regions;
  out.radius = radius;
  out.seed = seed;
  for (std::size_t i = 0; i < chosen.size(); ++i)
    if (chosen[i]) out.labeled_indices.push_back(i);
  return out;
}

/// Region count giving roughly @p target_fraction labeled points for the given radius.
inline std::size_t default_superpoint_regions(const PointCloud& cloud, const SpatialIndex& index,
                                              double radius = kDefaultSuperpointRadius,
                                              double target_fraction = 0.001) {
  // Estimate the mean region size from a few probe balls.
  const std::size_t probes = std::min<std::size_t>(16, cloud.size());
  double mean = 0.0;
  for (std::size_t p = 0; p < probes; ++p)
    mean += static_cast<double>(index.radius_search(cloud.position(p * cloud.size() / probes), radius).size());
  mean = std::max(1.0, mean / static_cast<double>(probes));
  const double want = target_fraction * static_cast<double>(cloud.size());
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(want / mean)));
}

// Text format: a header line "# scheme=<1pt|fraction|spt> [fraction=X] [regions=R radius=M] seed=S"
// followed by one labeled point index per line.

inline std::string weak_labels_to_string(const WeakLabelSet& w) {
  std::string s = "# scheme=";
  switch (w.scheme) {
    case WeakScheme::kOnePoint: s += "1pt"; break;
    case WeakScheme::kFraction: s += "fraction fraction=" + format_double(w.fraction); break;
    case WeakScheme::kSuperpoint:
      s += "spt regions=" + std::to_string(w.num_regions) + " radius=" + format_double(w.radius);
      break;
  }
  s += " seed=" + std::to_string(w.seed) + "\n";
  for (auto i : w.labeled_indices) s += std::to_string(i) + "\n";
  return s;
}

inline void save_weak_labels(const WeakLabelSet& w, const std::filesystem::path& path) {
  write_file_atomic(path, weak_labels_to_string(w));
}

inline WeakLabelSet parse_weak_labels(const std::string& text) {
  WeakLabelSet w;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "#") {
      if (header) throw ParseError("duplicate weak-label header at line " + std::to_string(line_no));
      header = true;
      for (std::size_t t = 1; t < tok.size(); ++t) {
        const auto eq = tok[t].find('=');
        if (eq == std::string_view::npos) throw ParseError("bad header field '" + std::string(tok[t]) + "'");
        const auto key = tok[t].substr(0, eq);
        const auto val = tok[t].substr(eq + 1);
        bool ok = true;
        if (key == "scheme") {
          if (val == "1pt") w.scheme = WeakScheme::kOnePoint;
          else if (val == "fraction") w.scheme = WeakScheme::kFraction;
          else if (val == "spt") w.scheme = WeakScheme::kSuperpoint;
          else ok = false;
        } else if (key == "fraction") {
          ok = parse_double(val, w.fraction);
        } else if (key == "regions") {
          ok = parse_int(val, w.num_regions);
        } else if (key == "radius") {
          ok = parse_double(val, w.radius);
        } else if (key == "seed") {
          ok = parse_int(val, w.seed);
        } else {
          ok = false;
        }
        if (!ok) throw ParseError("bad header field '" + std::string(tok[t]) + "'");
      }
      continue;
    }
    std::size_t idx = 0;
    if (tok.size() != 1 || !parse_int(tok[0], idx))
      throw ParseError("bad index at line " + std::to_string(line_no));
    if (!w.labeled_indices.empty() && idx <= w.labeled_indices.back())
      throw ParseError("indices not strictly increasing at line " + std::to_string(line_no));
    w.labeled_indices.push_back(idx);
  }
  if (!header) throw ParseError("weak-label file lacks a header line");
  return w;
}

inline WeakLabelSet load_weak_labels(const std::filesystem::path& path) {
  return parse_weak_labels(read_file(path));
}

}  // namespace wsseg

#endif  // WSSEG_WEAKLABEL_HPP
