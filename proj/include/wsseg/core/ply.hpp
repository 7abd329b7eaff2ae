// wsseg - weakly supervised point cloud segmentation
//
// ASCII PLY reader/writer for colored, optionally labeled point clouds.
//
// Written header:
//   ply
//   format ascii 1.0
//   element vertex N
//   property float x / y / z
//   property uchar red / green / blue
//   [property int label]          (-1 = unlabeled)
//   end_header
//
// Coordinates are written as the shortest decimal that round-trips the
// in-memory double, so save/load preserves positions bit for bit. Colors are
// quantized to 8 bits only here.

#ifndef WSSEG_CORE_PLY_HPP
#define WSSEG_CORE_PLY_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "wsseg/core/io.hpp"
#include "wsseg/core/types.hpp"

namespace wsseg {

inline std::string ply_to_string(const PointCloud& cloud, bool include_labels) {
  const bool labels = include_labels && cloud.has_labels();
  std::string s;
  s.reserve(64 * cloud.size() + 256);
  s += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  s += "property float x\nproperty float y\nproperty float z\n";
  s += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (labels) s += "property int label\n";
  s += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int c = 0; c < 3; ++c) {
      s += format_double(cloud.positions()(r, c));
      s += ' ';
    }
    for (int c = 0; c < 3; ++c) {
      s += std::to_string(static_cast<int>(std::lround(cloud.colors()(r, c) * 255.0)));
      s += (c < 2 || labels) ? ' ' : '\n';
    }
    if (labels) {
      s += std::to_string(cloud.labels()[i]);
      s += '\n';
    }
  }
  return s;
}

inline void save_ply(const PointCloud& cloud, const std::filesystem::path& path, bool include_labels) {
  write_file_atomic(path, ply_to_string(cloud, include_labels));
}

/**
 * @brief Parses an ASCII PLY vertex list.
 *
 * Properties may appear in any order and extra scalar properties are skipped.
 * num_classes of the result is max(min_classes, largest label + 1).
 */
inline PointCloud parse_ply(const std::string& text, int min_classes = 1) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = std::string_view(text).substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("malformed PLY header at line " + std::to_string(line_no) + ": " + what);
  };

  std::string_view line;
  if (!next_line(line) || line != "ply") throw fail("expected 'ply'");
  if (!next_line(line)) throw fail("unexpected end of file");
  {
    const auto tok = split_ws(line);
    if (tok.size() != 3 || tok[0] != "format") throw fail("expected format line");
    if (tok[1] != "ascii") throw fail("only ascii format is supported");
  }

  std::size_t count = 0;
  bool have_vertex = false;
  bool in_vertex = false;
  std::vector<std::string> props;
  for (;;) {
    if (!next_line(line)) throw fail("missing end_header");
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "element") {
      if (tok.size() != 3) throw fail("bad element line");
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        if (have_vertex) throw fail("duplicate vertex element");
        if (!parse_int(tok[2], count)) throw fail("bad vertex count");
        have_vertex = true;
      }
      continue;
    }
    if (tok[0] == "property") {
      if (tok.size() != 3) throw fail("bad property line");
      if (in_vertex) props.emplace_back(tok[2]);
      continue;
    }
    throw fail("unknown keyword '" + std::string(tok[0]) + "'");
  }
  if (!have_vertex) throw ParseError("PLY has no vertex element");

  auto find = [&](const char* name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == name) return static_cast<int>(i);
    return -1;
  };
  const std::array<const char*, 6> required{"x", "y", "z", "red", "green", "blue"};
  std::array<int, 6> col{};
  for (std::size_t i = 0; i < required.size(); ++i) {
    col[i] = find(required[i]);
    if (col[i] < 0) throw ParseError(std::string("missing property: ") + required[i]);
  }
  const int label_col = find("label");

  MatrixX3 positions(static_cast<Eigen::Index>(count), 3);
  MatrixX3 colors(static_cast<Eigen::Index>(count), 3);
  std::vector<int> labels;
  if (label_col >= 0) labels.resize(count);
  int max_label = -1;
  for (std::size_t i = 0; i < count; ++i) {
    if (!next_line(line)) throw ParseError("PLY ends after " + std::to_string(i) + " of " +
                                           std::to_string(count) + " vertices");
    const auto tok = split_ws(line);
    if (tok.size() < props.size())
      throw ParseError("vertex line " + std::to_string(line_no) + " has too few values");
    const auto r = static_cast<Eigen::Index>(i);
    for (int c = 0; c < 3; ++c) {
      double v = 0.0;
      if (!parse_double(tok[static_cast<std::size_t>(col[static_cast<std::size_t>(c)])], v))
        throw ParseError("bad coordinate at line " + std::to_string(line_no));
      positions(r, c) = v;
    }
    for (int c = 0; c < 3; ++c) {
      int v = 0;
      if (!parse_int(tok[static_cast<std::size_t>(col[static_cast<std::size_t>(3 + c)])], v) || v < 0 || v > 255)
        throw ParseError("bad color at line " + std::to_string(line_no));
      colors(r, c) = v / 255.0;
    }
    if (label_col >= 0) {
      int l = 0;
      if (!parse_int(tok[static_cast<std::size_t>(label_col)], l) || l < kUnlabeled)
        throw ParseError("bad label at line " + std::to_string(line_no));
      labels[i] = l;
      max_label = std::max(max_label, l);
    }
  }
  const int num_classes = std::max(min_classes, max_label + 1);
  if (label_col >= 0) return PointCloud(std::move(positions), std::move(colors), std::move(labels), num_classes);
  return PointCloud(std::move(positions), std::move(colors), std::nullopt, num_classes);
}

inline PointCloud load_ply(const std::filesystem::path& path, int min_classes = 1) {
  return parse_ply(read_file(path), min_classes);
}

}  // namespace wsseg

#endif  // WSSEG_CORE_PLY_HPP
