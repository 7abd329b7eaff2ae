// wsseg - weakly supervised point cloud segmentation
//
// Small local-aggregation point encoder with a colorization head or a
// segmentation head, hand-written reverse-mode gradients, encoder transfer,
// and a text checkpoint format.
//
// Per center point i with K neighbors j:
//   x_ij = ((p_j - p_i) / s_local, |p_j - p_i| / s_local,
//           (p_j - centroid) / r_cloud, f_j[3..5])             (10 values)
//   h_ij = relu(W2 relu(W1 x_ij + b1) + b2)                  local MLP
//   g_i  = max_j h_ij                                        max pool
//   z_i  = W4 relu(W3 g_i + b3) + b4                         embedding (d)
//   y_i  = W5 z_i + b5                                       6 or C outputs
// and the segmentation head additionally applies a row softmax.
// s_local (mean distance to the K-th neighbor) and r_cloud (RMS distance to
// the centroid) are per-cloud constants, so Z is invariant to translations.

#ifndef WSSEG_MODEL_HPP
#define WSSEG_MODEL_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wsseg/core/io.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/spatial_index.hpp"
#include "wsseg/core/types.hpp"
#include "wsseg/pretext.hpp"

namespace wsseg {

enum class Head { kPretext, kSegmentation };

inline constexpr int kInputFeatures = 6;
inline constexpr int kNeighborFeatures = kInputFeatures + 4;
inline constexpr int kDefaultHidden = 32;
inline constexpr int kDefaultEmbedding = 16;

struct Linear {
  Matrix weight;  ///< in x out
  Matrix bias;    ///< 1 x out
};

struct ModelParams {
  Head head = Head::kSegmentation;
  int num_classes = 2;
  Linear local1, local2, point1, point2, output;
  std::uint64_t revision = 0;  ///< bumped on every in-place update

  int hidden() const { return static_cast<int>(local1.weight.cols()); }
  int embedding_dim() const { return static_cast<int>(point2.weight.cols()); }
  int outputs() const { return static_cast<int>(output.weight.cols()); }

  template <typename F>
  void for_each_tensor(F&& f) {
    Linear* layers[] = {&local1, &local2, &point1, &point2, &output};
    const char* names[] = {"local1", "local2", "point1", "point2", "head"};
    for (int l = 0; l < 5; ++l) {
      f(std::string(names[l]) + ".weight", layers[l]->weight);
      f(std::string(names[l]) + ".bias", layers[l]->bias);
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  /// Same shapes, all zeros (used as a gradient accumulator).
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_tensor([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  void validate() const {
    const int h = hidden();
    auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
      if (m.rows() != r || m.cols() != c)
        throw InvalidArgument(std::string("tensor ") + name + " has shape " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
    };
    expect(local1.weight, kNeighborFeatures, h, "local1.weight");
    expect(local2.weight, h, h, "local2.weight");
    expect(point1.weight, h, h, "point1.weight");
    expect(point2.weight, h, point2.weight.cols(), "point2.weight");
    const Eigen::Index d = point2.weight.cols();
    const Eigen::Index out = head == Head::kPretext ? kPretextOutputs : num_classes;
    expect(output.weight, d, out, "head.weight");
    expect(local1.bias, 1, h, "local1.bias");
    expect(local2.bias, 1, h, "local2.bias");
    expect(point1.bias, 1, h, "point1.bias");
    expect(point2.bias, 1, d, "point2.bias");
    expect(output.bias, 1, out, "head.bias");
  }
};

namespace detail {

inline Linear init_linear(int in, int out, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l{Matrix(in, out), Matrix::Zero(1, out)};
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = rng.uniform(-bound, bound);
  return l;
}

}  // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline ModelParams init_params(Head head, int num_classes, int embedding_dim = kDefaultEmbedding,
                               int hidden = kDefaultHidden, std::uint64_t seed = 0) {
  if (num_classes < 2) throw InvalidArgument("num_classes must be >= 2");
  if (embedding_dim < 2) throw InvalidArgument("embedding dimension must be >= 2");
  if (hidden < 4) throw InvalidArgument("hidden width must be >= 4");
  SplitMix64 rng(seed);
  ModelParams p;
  p.head = head;
  p.num_classes = num_classes;
  p.local1 = detail::init_linear(kNeighborFeatures, hidden, rng);
  p.local2 = detail::init_linear(hidden, hidden, rng);
  p.point1 = detail::init_linear(hidden, hidden, rng);
  p.point2 = detail::init_linear(hidden, embedding_dim, rng);
  p.output = detail::init_linear(embedding_dim, head == Head::kPretext ? kPretextOutputs : num_classes, rng);
  return p;
}

/// Copies the encoder of @p source and attaches a freshly initialized segmentation head.
inline ModelParams transfer_encoder(const ModelParams& source, int num_classes, std::uint64_t seed) {
  source.validate();
  ModelParams seg = init_params(Head::kSegmentation, num_classes, source.embedding_dim(), source.hidden(), seed);
  seg.local1 = source.local1;
  seg.local2 = source.local2;
  seg.point1 = source.point1;
  seg.point2 = source.point2;
  seg.validate();
  return seg;
}

/**
 * @brief Per-cloud network input: features, neighborhoods and the
 * normalization constants derived from them.
 */
struct SceneInput {
  Matrix features;  ///< N x 6, columns 0..2 are positions
  NeighborTable neighbors;
  Vector3 centroid = Vector3::Zero();
  double cloud_radius = 1.0;
  double local_scale = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

inline SceneInput prepare_input(Matrix features, NeighborTable neighbors) {
  if (features.cols() != kInputFeatures)
    throw InvalidArgument("expected " + std::to_string(kInputFeatures) + " feature columns, got " +
                          std::to_string(features.cols()));
  if (neighbors.rows() != static_cast<std::size_t>(features.rows()))
    throw InvalidArgument("neighbor table does not match feature rows");
  if (features.rows() == 0) throw InvalidArgument("empty input");
  SceneInput in{std::move(features), std::move(neighbors)};
  const auto n = in.features.rows();
  for (Eigen::Index i = 0; i < n; ++i) in.centroid += in.features.row(i).head<3>().transpose();
  in.centroid /= static_cast<double>(n);
  double r2 = 0.0, far = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector3 p = in.features.row(i).head<3>().transpose();
    r2 += (p - in.centroid).squaredNorm();
    const auto row = in.neighbors.row(static_cast<std::size_t>(i));
    far += (in.features.row(row.back()).head<3>().transpose() - p).norm();
  }
  in.cloud_radius = std::sqrt(r2 / static_cast<double>(n));
  if (!(in.cloud_radius > 1e-12)) in.cloud_radius = 1.0;
  in.local_scale = far / static_cast<double>(n);
  if (!(in.local_scale > 1e-12)) in.local_scale = 1.0;
  return in;
}

inline SceneInput prepare_input(Matrix features, const SpatialIndex& index, std::size_t k = SpatialIndex::kDefaultK) {
  return prepare_input(std::move(features), index.neighbor_table(k));
}

struct ForwardCache {
  std::uint64_t revision = 0;
  Head head = Head::kSegmentation;
  std::size_t k = 0;
  Matrix x0;  ///< (B*K) x 10
  Matrix h1;  ///< relu outputs of local1
  Matrix h2;  ///< relu outputs of local2
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;  ///< B x h, neighbor slot
  Matrix pooled;
  Matrix g1;  ///< relu outputs of point1
  Matrix z;
};

struct ForwardResult {
  Matrix z;        ///< B x d embeddings
  Matrix outputs;  ///< B x 6 pretext values or B x C logits
  Matrix probs;    ///< B x C softmax (segmentation head only)
  ForwardCache cache;
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) s += (p(i, c) = std::exp(logits(i, c) - m));
    p.row(i) /= s;
  }
  return p;
}

/// Forward pass for the listed center points of @p input.
inline ForwardResult forward(const ModelParams& params, const SceneInput& input, std::span<const std::size_t> centers) {
  params.validate();
  const std::size_t k = input.neighbors.k();
  const auto b = static_cast<Eigen::Index>(centers.size());
  const auto kk = static_cast<Eigen::Index>(k);
  const int h = params.hidden();
  ForwardResult r;
  ForwardCache& c = r.cache;
  c.revision = params.revision;
  c.head = params.head;
  c.k = k;

  c.x0.resize(b * kk, kNeighborFeatures);
  const double inv_local = 1.0 / input.local_scale;
  const double inv_radius = 1.0 / input.cloud_radius;
  for (Eigen::Index bi = 0; bi < b; ++bi) {
    const std::size_t ci = centers[static_cast<std::size_t>(bi)];
    if (ci >= input.size()) throw InvalidArgument("center index out of range");
    const auto pc = input.features.row(static_cast<Eigen::Index>(ci)).head<3>();
    const auto nb = input.neighbors.row(ci);
    for (Eigen::Index j = 0; j < kk; ++j) {
      const auto f = input.features.row(nb[static_cast<std::size_t>(j)]);
      auto x = c.x0.row(bi * kk + j);
      const double dx = f[0] - pc[0], dy = f[1] - pc[1], dz = f[2] - pc[2];
      x[0] = dx * inv_local;
      x[1] = dy * inv_local;
      x[2] = dz * inv_local;
      x[3] = std::sqrt(dx * dx + dy * dy + dz * dz) * inv_local;
      x[4] = (f[0] - input.centroid[0]) * inv_radius;
      x[5] = (f[1] - input.centroid[1]) * inv_radius;
      x[6] = (f[2] - input.centroid[2]) * inv_radius;
      x[7] = f[3];
      x[8] = f[4];
      x[9] = f[5];
    }
  }

  c.h1.noalias() = c.x0 * params.local1.weight;
  c.h1.rowwise() += params.local1.bias.row(0);
  c.h1 = c.h1.cwiseMax(0.0);
  c.h2.noalias() = c.h1 * params.local2.weight;
  c.h2.rowwise() += params.local2.bias.row(0);
  c.h2 = c.h2.cwiseMax(0.0);

  c.pooled.resize(b, h);
  c.argmax.resize(b, h);
  for (Eigen::Index bi = 0; bi < b; ++bi) {
    for (int u = 0; u < h; ++u) {
      Eigen::Index best = 0;
      double v = c.h2(bi * kk, u);
      for (Eigen::Index j = 1; j < kk; ++j) {
        const double w = c.h2(bi * kk + j, u);
        if (w > v) {
          v = w;
          best = j;
        }
      }
      c.pooled(bi, u) = v;
      c.argmax(bi, u) = static_cast<std::int32_t>(best);
    }
  }

  c.g1.noalias() = c.pooled * params.point1.weight;
  c.g1.rowwise() += params.point1.bias.row(0);
  c.g1 = c.g1.cwiseMax(0.0);
  c.z.noalias() = c.g1 * params.point2.weight;
  c.z.rowwise() += params.point2.bias.row(0);
  r.z = c.z;
  r.outputs.noalias() = c.z * params.output.weight;
  r.outputs.rowwise() += params.output.bias.row(0);
  if (params.head == Head::kSegmentation) r.probs = softmax_rows(r.outputs);
  return r;
}

/// Forward pass over every point.
inline ForwardResult forward(const ModelParams& params, const SceneInput& input) {
  std::vector<std::size_t> all(input.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return forward(params, input, all);
}

/**
 * @brief Exact parameter gradients for a cached forward pass.
 *
 * @p grad_outputs is dL/d(outputs): the pretext values, or the logits for the
 * segmentation head. Throws if @p params changed since the forward pass.
 */
inline ModelParams backward(const ModelParams& params, const ForwardCache& c, const Matrix& grad_outputs) {
  if (c.revision != params.revision || c.head != params.head)
    throw InvalidArgument("stale forward cache: parameters changed since the forward pass");
  if (grad_outputs.rows() != c.z.rows() || grad_outputs.cols() != params.outputs())
    throw InvalidArgument("grad_outputs shape does not match the forward pass");
  ModelParams g = params.zeros_like();
  const auto b = c.z.rows();
  const auto kk = static_cast<Eigen::Index>(c.k);
  const int h = params.hidden();

  g.output.weight.noalias() = c.z.transpose() * grad_outputs;
  g.output.bias = grad_outputs.colwise().sum();
  const Matrix gz = grad_outputs * params.output.weight.transpose();

  g.point2.weight.noalias() = c.g1.transpose() * gz;
  g.point2.bias = gz.colwise().sum();
  Matrix ga3 = gz * params.point2.weight.transpose();
  ga3 = ga3.cwiseProduct((c.g1.array() > 0.0).cast<double>().matrix());

  g.point1.weight.noalias() = c.pooled.transpose() * ga3;
  g.point1.bias = ga3.colwise().sum();
  const Matrix gp = ga3 * params.point1.weight.transpose();

  // Max pool: only the arg-max neighbor of each channel receives gradient.
  Matrix gh1 = Matrix::Zero(c.h1.rows(), h);
  for (Eigen::Index bi = 0; bi < b; ++bi) {
    for (int u = 0; u < h; ++u) {
      const Eigen::Index row = bi * kk + c.argmax(bi, u);
      const double gv = gp(bi, u);
      if (gv == 0.0 || !(c.h2(row, u) > 0.0)) continue;
      g.local2.weight.col(u) += gv * c.h1.row(row).transpose();
      g.local2.bias(0, u) += gv;
      gh1.row(row) += gv * params.local2.weight.col(u).transpose();
    }
  }
  gh1 = gh1.cwiseProduct((c.h1.array() > 0.0).cast<double>().matrix());
  g.local1.weight.noalias() = c.x0.transpose() * gh1;
  g.local1.bias = gh1.colwise().sum();
  return g;
}

/// Embeddings and outputs for every point, evaluated in chunks to bound memory.
inline ForwardResult predict(const ModelParams& params, const SceneInput& input, std::size_t chunk = 4096) {
  const std::size_t n = input.size();
  ForwardResult all;
  all.z.resize(static_cast<Eigen::Index>(n), params.embedding_dim());
  all.outputs.resize(static_cast<Eigen::Index>(n), params.outputs());
  if (params.head == Head::kSegmentation) all.probs.resize(static_cast<Eigen::Index>(n), params.outputs());
  std::vector<std::size_t> centers;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    centers.resize(end - start);
    std::iota(centers.begin(), centers.end(), start);
    ForwardResult r = forward(params, input, centers);
    const auto s = static_cast<Eigen::Index>(start), len = static_cast<Eigen::Index>(end - start);
    all.z.middleRows(s, len) = r.z;
    all.outputs.middleRows(s, len) = r.outputs;
    if (params.head == Head::kSegmentation) all.probs.middleRows(s, len) = r.probs;
  }
  return all;
}

/// Arg-max class per row (ties to the lower class).
inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// Checkpoint text format:
//   wsseg-checkpoint 1
//   head <pretext|segmentation>
//   num_classes <C>
//   tensor <name> <rows> <cols>
//   <rows lines of cols values, shortest round-trip decimal>
// repeated for the ten tensors in for_each_tensor order.

inline std::string checkpoint_to_string(const ModelParams& p) {
  p.validate();
  std::string s = "wsseg-checkpoint 1\n";
  s += std::string("head ") + (p.head == Head::kPretext ? "pretext" : "segmentation") + "\n";
  s += "num_classes " + std::to_string(p.num_classes) + "\n";
  p.for_each_tensor([&](const std::string& name, const Matrix& m) {
    s += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) s += ' ';
        s += format_double(m(i, j));
      }
      s += '\n';
    }
  });
  return s;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(p));
}

inline ModelParams parse_checkpoint(const std::string& text) {
  std::size_t pos = 0;
  auto next_tokens = [&]() {
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      auto tok = split_ws(std::string_view(text).substr(pos, end - pos));
      pos = end + 1;
      if (!tok.empty()) return tok;
    }
    return std::vector<std::string_view>{};
  };
  auto tok = next_tokens();
  if (tok.size() != 2 || tok[0] != "wsseg-checkpoint" || tok[1] != "1") throw ParseError("not a wsseg checkpoint (v1)");
  ModelParams p;
  tok = next_tokens();
  if (tok.size() != 2 || tok[0] != "head") throw ParseError("checkpoint: expected head line");
  if (tok[1] == "pretext") p.head = Head::kPretext;
  else if (tok[1] == "segmentation") p.head = Head::kSegmentation;
  else throw ParseError("checkpoint: unknown head '" + std::string(tok[1]) + "'");
  tok = next_tokens();
  if (tok.size() != 2 || tok[0] != "num_classes" || !parse_int(tok[1], p.num_classes))
    throw ParseError("checkpoint: expected num_classes line");
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    auto t = next_tokens();
    Eigen::Index rows = 0, cols = 0;
    if (t.size() != 4 || t[0] != "tensor" || t[1] != name || !parse_int(t[2], rows) || !parse_int(t[3], cols))
      throw ParseError("checkpoint: expected tensor " + name);
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      auto vals = next_tokens();
      if (static_cast<Eigen::Index>(vals.size()) != cols) throw ParseError("checkpoint: bad row in tensor " + name);
      for (Eigen::Index j = 0; j < cols; ++j)
        if (!parse_double(vals[static_cast<std::size_t>(j)], m(i, j))) throw ParseError("checkpoint: bad value in " + name);
    }
  });
  p.validate();
  return p;
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

/// Loads and rejects any tensor whose shape differs from @p expected (checked by name).
inline ModelParams load_checkpoint(const std::filesystem::path& path, const ModelParams& expected) {
  ModelParams p = load_checkpoint(path);
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> shapes;
  expected.for_each_tensor([&](const std::string& name, const Matrix& m) { shapes.push_back({name, {m.rows(), m.cols()}}); });
  std::size_t i = 0;
  p.for_each_tensor([&](const std::string& name, const Matrix& m) {
    const auto& [rows, cols] = shapes[i++].second;
    if (m.rows() != rows || m.cols() != cols)
      throw InvalidArgument("checkpoint tensor " + name + " has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  });
  return p;
}

}  // namespace wsseg

#endif  // WSSEG_MODEL_HPP
