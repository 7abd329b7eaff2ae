#include <gtest/gtest.h>

#include <filesystem>

#include "support/oracles.hpp"
#include "wsseg/model.hpp"

using namespace wsseg;

namespace {

Matrix random_features(Eigen::Index n, SplitMix64& rng) {
  Matrix f(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    f.row(i) << rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 2), rng.uniform(0, 1), rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5);
  }
  return f;
}

SceneInput make_input(const Matrix& f, std::size_t k = 16) {
  return prepare_input(f, SpatialIndex(MatrixX3(f.leftCols(3))), k);
}

// Activation pattern: everything that selects a branch in the piecewise-linear graph.
std::vector<std::int64_t> pattern(const ForwardCache& c) {
  std::vector<std::int64_t> p;
  for (Eigen::Index i = 0; i < c.h1.size(); ++i) p.push_back(c.h1.data()[i] > 0.0);
  for (Eigen::Index i = 0; i < c.h2.size(); ++i) p.push_back(c.h2.data()[i] > 0.0);
  for (Eigen::Index i = 0; i < c.argmax.size(); ++i) p.push_back(c.argmax.data()[i]);
  for (Eigen::Index i = 0; i < c.g1.size(); ++i) p.push_back(c.g1.data()[i] > 0.0);
  return p;
}

void check_gradients(Head head, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const SceneInput in = make_input(random_features(16, rng), 8);
  ModelParams params = init_params(head, 3, 8, 8, seed);
  // Nonzero biases exercise the bias paths.
  params.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (name.find("bias") != std::string::npos)
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-0.1, 0.1);
  });
  const ForwardResult base = forward(params, in);
  Matrix weights(base.outputs.rows(), base.outputs.cols());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.uniform(-1, 1);
  const ModelParams grads = backward(params, base.cache, weights);
  const auto base_pattern = pattern(base.cache);

  std::vector<Matrix*> tensors;
  std::vector<const Matrix*> grad_tensors;
  std::vector<std::string> names;
  params.for_each_tensor([&](const std::string& name, Matrix& m) {
    tensors.push_back(&m);
    names.push_back(name);
  });
  grads.for_each_tensor([&](const std::string&, const Matrix& m) { grad_tensors.push_back(&m); });

  const double h = 1e-5;
  int checked = 0, skipped = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Matrix& m = *tensors[t];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m.data()[i];
      m.data()[i] = v + h;
      const ForwardResult fp = forward(params, in);
      m.data()[i] = v - h;
      const ForwardResult fm = forward(params, in);
      m.data()[i] = v;
      if (pattern(fp.cache) != base_pattern || pattern(fm.cache) != base_pattern) {
        ++skipped;
        continue;
      }
      const double numeric = ((fp.outputs - fm.outputs).cwiseProduct(weights)).sum() / (2 * h);
      const double analytic = grad_tensors[t]->data()[i];
      ASSERT_LE(oracle::relative_error(analytic, numeric, 1e-4), 1e-4) << names[t] << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 10 * skipped);
}

}  // namespace

TEST(InitParams, DeterministicZeroBiasAndScaled) {
  const ModelParams a = init_params(Head::kSegmentation, 4, 16, 32, 7);
  const ModelParams b = init_params(Head::kSegmentation, 4, 16, 32, 7);
  std::vector<Matrix> ta, tb;
  a.for_each_tensor([&](const std::string& name, const Matrix& m) {
    ta.push_back(m);
    if (name.find("bias") != std::string::npos) {
      EXPECT_TRUE(m.isZero()) << name;
    }
  });
  b.for_each_tensor([&](const std::string&, const Matrix& m) { tb.push_back(m); });
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_TRUE((ta[i].array() == tb[i].array()).all());
  EXPECT_THROW(init_params(Head::kSegmentation, 1), InvalidArgument);
  EXPECT_THROW(init_params(Head::kSegmentation, 4, 1), InvalidArgument);
  EXPECT_THROW(init_params(Head::kSegmentation, 4, 16, 3), InvalidArgument);
}

TEST(InitParams, WeightSpreadMatchesFanIn) {
  // local2.weight is 128 x 128 (fan_in 128) at hidden = 128: 16384 entries.
  const ModelParams p = init_params(Head::kSegmentation, 4, 16, 128, 3);
  const Matrix& w = p.local2.weight;
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  const double expected = 1.0 / std::sqrt(3.0 * 128.0);
  EXPECT_NEAR(sd, expected, 0.2 * expected);
  EXPECT_NEAR(mean, 0.0, 0.1 * expected);
}

TEST(Forward, ShapesAndSoftmaxRows) {
  SplitMix64 rng(1);
  const SceneInput in = make_input(random_features(200, rng));
  const ModelParams seg = init_params(Head::kSegmentation, 5, 16, 32, 2);
  const ForwardResult r = forward(seg, in);
  EXPECT_EQ(r.z.rows(), 200);
  EXPECT_EQ(r.z.cols(), 16);
  EXPECT_EQ(r.outputs.cols(), 5);
  for (Eigen::Index i = 0; i < 200; ++i) EXPECT_NEAR(r.probs.row(i).sum(), 1.0, 1e-9);
  const ForwardResult p = forward(init_params(Head::kPretext, 5, 16, 32, 2), in);
  EXPECT_EQ(p.outputs.cols(), 6);
  EXPECT_EQ(p.probs.size(), 0);
}

TEST(Forward, RejectsShapeMismatch) {
  SplitMix64 rng(2);
  EXPECT_THROW(prepare_input(Matrix::Zero(10, 5), SpatialIndex(MatrixX3::Random(10, 3))), InvalidArgument);
  const SceneInput in = make_input(random_features(20, rng));
  ModelParams p = init_params(Head::kSegmentation, 3);
  p.local1.weight = Matrix::Zero(9, 32);
  EXPECT_THROW(forward(p, in), InvalidArgument);
  const std::vector<std::size_t> bad{25};
  EXPECT_THROW(forward(init_params(Head::kSegmentation, 3), in, bad), InvalidArgument);
}

TEST(Forward, TranslationInvariant) {
  SplitMix64 rng(3);
  const Matrix f = random_features(300, rng);
  Matrix g = f;
  g.col(0).array() += 123.25;
  g.col(1).array() -= 47.5;
  g.col(2).array() += 3.0;
  const ModelParams p = init_params(Head::kSegmentation, 4, 16, 32, 4);
  const Matrix za = forward(p, make_input(f)).z;
  const Matrix zb = forward(p, make_input(g)).z;
  EXPECT_LE((za - zb).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Forward, PermutationEquivariant) {
  SplitMix64 rng(5);
  const Eigen::Index n = 300;
  const Matrix f = random_features(n, rng);
  const auto perm = sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(n), rng);
  Matrix g(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) g.row(i) = f.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
  const ModelParams p = init_params(Head::kSegmentation, 4, 16, 32, 6);
  const Matrix za = forward(p, make_input(f)).z;
  const Matrix zb = forward(p, make_input(g)).z;
  for (Eigen::Index i = 0; i < n; ++i)
    EXPECT_LE((zb.row(i) - za.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, SubsetOfCentersMatchesFullPass) {
  SplitMix64 rng(7);
  const SceneInput in = make_input(random_features(100, rng));
  const ModelParams p = init_params(Head::kSegmentation, 3, 16, 32, 8);
  const ForwardResult all = forward(p, in);
  const std::vector<std::size_t> centers{5, 17, 99, 0};
  const ForwardResult part = forward(p, in, centers);
  for (std::size_t i = 0; i < centers.size(); ++i)
    EXPECT_TRUE((part.z.row(static_cast<Eigen::Index>(i)).array() == all.z.row(static_cast<Eigen::Index>(centers[i])).array()).all());
  const ForwardResult pred = predict(p, in, 7);
  EXPECT_LE((pred.z - all.z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((pred.probs - all.probs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  SplitMix64 rng(9);
  const SceneInput in = make_input(random_features(50, rng));
  const ModelParams p = init_params(Head::kSegmentation, 3);
  const ForwardResult r = forward(p, in);
  const ModelParams g = backward(p, r.cache, Matrix::Zero(50, 3));
  g.for_each_tensor([](const std::string& name, const Matrix& m) { EXPECT_TRUE(m.isZero()) << name; });
}

TEST(Backward, MatchesFiniteDifferencesSegmentation) {
  for (std::uint64_t s : {11u, 12u, 13u}) check_gradients(Head::kSegmentation, s);
}

TEST(Backward, MatchesFiniteDifferencesPretext) {
  for (std::uint64_t s : {21u, 22u}) check_gradients(Head::kPretext, s);
}

TEST(Backward, RejectsStaleCache) {
  SplitMix64 rng(14);
  const SceneInput in = make_input(random_features(30, rng));
  ModelParams p = init_params(Head::kSegmentation, 3);
  const ForwardResult r = forward(p, in);
  ++p.revision;
  EXPECT_THROW(backward(p, r.cache, Matrix::Zero(30, 3)), InvalidArgument);
  --p.revision;
  EXPECT_THROW(backward(p, r.cache, Matrix::Zero(29, 3)), InvalidArgument);
}

TEST(Backward, MaxPoolRoutesOnlyThroughArgmaxNeighbors) {
  SplitMix64 rng(15);
  const Matrix f = random_features(120, rng);
  const SceneInput in = make_input(f);
  const ModelParams p = init_params(Head::kSegmentation, 3, 16, 32, 16);
  const std::vector<std::size_t> center{42};
  const ForwardResult r = forward(p, in, center);
  std::vector<bool> winner(16, false);
  for (int u = 0; u < p.hidden(); ++u)
    if (r.cache.h2(r.cache.argmax(0, u), u) > 0.0) winner[static_cast<std::size_t>(r.cache.argmax(0, u))] = true;
  const auto nb = in.neighbors.row(42);
  int losers = 0, winners = 0;
  for (std::size_t j = 1; j < 16; ++j) {
    // Perturb the neighbor's color only; the center's own row and all geometry stay fixed.
    SceneInput moved = in;
    moved.features(nb[j], 5) += 1e-7;
    const ForwardResult q = forward(p, moved, center);
    if (winner[j]) {
      ++winners;
      EXPECT_GT((q.z - r.z).cwiseAbs().maxCoeff(), 0.0) << "slot " << j;
    } else {
      ++losers;
      EXPECT_TRUE((q.z.array() == r.z.array()).all()) << "slot " << j;
    }
  }
  EXPECT_GT(losers, 0);
  EXPECT_GT(winners, 0);
}

TEST(Transfer, CopiesEncoderAndReplacesHead) {
  SplitMix64 rng(17);
  const SceneInput in = make_input(random_features(80, rng));
  const ModelParams pre = init_params(Head::kPretext, 4, 16, 32, 18);
  const ModelParams seg = transfer_encoder(pre, 4, 19);
  EXPECT_TRUE((seg.local1.weight.array() == pre.local1.weight.array()).all());
  EXPECT_TRUE((seg.point2.bias.array() == pre.point2.bias.array()).all());
  EXPECT_EQ(seg.output.weight.cols(), 4);
  EXPECT_EQ(pre.output.weight.cols(), 6);
  EXPECT_EQ(seg.head, Head::kSegmentation);
  EXPECT_TRUE((forward(pre, in).z.array() == forward(seg, in).z.array()).all());
  ModelParams broken = pre;
  broken.local2.weight = Matrix::Zero(3, 3);
  EXPECT_THROW(transfer_encoder(broken, 4, 1), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsExact) {
  const ModelParams p = init_params(Head::kSegmentation, 5, 16, 32, 20);
  const ModelParams q = parse_checkpoint(checkpoint_to_string(p));
  EXPECT_EQ(q.head, p.head);
  EXPECT_EQ(q.num_classes, 5);
  std::vector<Matrix> a, b;
  p.for_each_tensor([&](const std::string&, const Matrix& m) { a.push_back(m); });
  q.for_each_tensor([&](const std::string&, const Matrix& m) { b.push_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE((a[i].array() == b[i].array()).all());
}

TEST(Checkpoint, ShapeMismatchIsRejectedByName) {
  const auto path = std::filesystem::temp_directory_path() / ("wsseg_ckpt_" + std::to_string(::getpid()) + ".txt");
  save_checkpoint(init_params(Head::kSegmentation, 5), path);
  EXPECT_NO_THROW(load_checkpoint(path, init_params(Head::kSegmentation, 5)));
  try {
    load_checkpoint(path, init_params(Head::kSegmentation, 4));
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
  EXPECT_THROW(parse_checkpoint("not a checkpoint\n"), ParseError);
}
