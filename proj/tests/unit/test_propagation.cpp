#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/propagation.hpp"

using namespace wsseg;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, SplitMix64& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double t = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) t += (p(i, c) = std::exp(logits(i, c) - m));
    p.row(i) /= t;
  }
  return p;
}


PseudoLabelSet single_label(std::size_t n, std::size_t index, std::vector<double> probs) {
  PseudoLabelSet p;
  p.point_mask.assign(n, false);
  p.point_mask[index] = true;
  p.num_classes = static_cast<int>(probs.size());
  const int chosen = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  p.labels.push_back({index, chosen, std::move(probs)});
  return p;
}

}  // namespace

TEST(Prototypes, SingletonAndSymmetricMeans) {
  Matrix z(1, 3);
  z << 1, 2, 3;
  const std::vector<int> l0{0};
  const Prototypes p = compute_prototypes(z, l0, 3);
  EXPECT_EQ(p.rho.row(0), z.row(0));
  EXPECT_EQ(p.present, (std::vector<bool>{true, false, false}));

  Matrix u(2, 2);
  u << 0.3, -0.7, -0.3, 0.7;
  const std::vector<int> l1{1, 1};
  EXPECT_TRUE(compute_prototypes(u, l1, 2).rho.row(1).isZero());
}

TEST(Prototypes, MatchPerClassAccumulation) {
  SplitMix64 rng(1);
  const Matrix z = random_matrix(5, 3, rng);
  const std::vector<int> labels{0, 1, 1, 0, 1};
  const Prototypes p = compute_prototypes(z, labels, 2);
  for (int c = 0; c < 2; ++c) {
    RowVector acc = RowVector::Zero(3);
    int n = 0;
    for (int i = 0; i < 5; ++i)
      if (labels[static_cast<std::size_t>(i)] == c) {
        acc += z.row(i);
        ++n;
      }
    EXPECT_LE((p.rho.row(c) - acc / n).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Prototypes, RejectsEmptyAndOutOfRange) {
  try {
    compute_prototypes(Matrix(0, 3), std::vector<int>{}, 2);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "no labeled points");
  }
  EXPECT_THROW(compute_prototypes(Matrix::Zero(1, 2), std::vector<int>{2}, 2), InvalidArgument);
}

TEST(Similarity, ClosedFormValues) {
  Matrix rho(2, 2);
  rho << 0, 0, 1, 1;
  const Prototypes p{rho, {true, true}};
  Matrix zu(3, 2);
  zu << 0, 0, 1, 0, 2, 3;
  const Matrix w = similarity_matrix(zu, p, 1.0);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) {
      const double dx = zu(i, 0) - rho(c, 0), dy = zu(i, 1) - rho(c, 1);
      EXPECT_DOUBLE_EQ(w(i, c), std::exp(-(dx * dx + dy * dy)));
    }
  EXPECT_EQ(w(0, 0), 1.0);
  // |z - rho|^2 = sigma -> e^-1
  EXPECT_NEAR(similarity_matrix(zu, p, 2.0)(2, 1), std::exp(-2.5), 1e-15);
  EXPECT_NEAR(similarity_matrix(zu.row(1), p, 1.0)(0, 0), std::exp(-1.0), 1e-15);
}

TEST(Similarity, AbsentClassesHaveNoColumnAndErrorsAreRaised) {
  Matrix rho = Matrix::Zero(3, 2);
  const Prototypes p{rho, {false, true, false}};
  EXPECT_EQ(similarity_matrix(Matrix::Zero(4, 2), p, 1.0).cols(), 1);
  EXPECT_THROW(similarity_matrix(Matrix::Zero(4, 2), Prototypes{rho, {false, false, false}}, 1.0), InvalidArgument);
  EXPECT_THROW(similarity_matrix(Matrix::Zero(4, 2), p, 0.0), InvalidArgument);
}

TEST(Similarity, MonotoneInDistance) {
  Matrix rho(1, 2);
  rho << 0, 0;
  const Prototypes p{rho, {true}};
  Matrix zu(5, 2);
  zu << 2.0, 0, 1.5, 0, 1.0, 0, 0.5, 0, 0.1, 0;
  const Matrix w = similarity_matrix(zu, p, 0.7);
  for (Eigen::Index i = 1; i < 5; ++i) EXPECT_GT(w(i, 0), w(i - 1, 0));
}

TEST(Assignment, ClosedFormAndDegenerateCases) {
  Matrix w(1, 2);
  w << 1.0, 0.0;
  const Matrix s = class_assignment(w);
  EXPECT_NEAR(s(0, 0), std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  EXPECT_NEAR(s(0, 1), 1.0 / (std::exp(1.0) + 1.0), 1e-15);
  const Matrix u = class_assignment(Matrix::Constant(3, 4, 0.3));
  EXPECT_TRUE(u.isApproxToConstant(0.25, 1e-15));
  EXPECT_TRUE(class_assignment(Matrix::Constant(5, 1, 0.2)).isApproxToConstant(1.0, 0.0));
}

TEST(Assignment, RowStochasticAndShiftInvariantArgmax) {
  SplitMix64 rng(2);
  const Matrix w = random_matrix(100, 5, rng).cwiseAbs();
  const Matrix s = class_assignment(w);
  Matrix shifted = w;
  for (Eigen::Index i = 0; i < 100; ++i) shifted.row(i).array() += rng.uniform(-3, 3);
  const Matrix s2 = class_assignment(shifted);
  for (Eigen::Index i = 0; i < 100; ++i) {
    EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-9);
    EXPECT_GT(s.row(i).minCoeff(), 0.0);
    Eigen::Index a, b;
    s.row(i).maxCoeff(&a);
    s2.row(i).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

TEST(TopK, ClampAndArgmax) {
  SplitMix64 rng(3);
  const Matrix s = class_assignment(random_matrix(4, 3, rng));
  const TopKMask all = topk_mask(s, 10);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(all.count_column(c), 4u);
  const TopKMask one = topk_mask(s, 1);
  for (Eigen::Index c = 0; c < 3; ++c) {
    Eigen::Index r;
    s.col(c).maxCoeff(&r);
    EXPECT_TRUE(one(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
    EXPECT_EQ(one.count_column(static_cast<std::size_t>(c)), 1u);
  }
  EXPECT_THROW(topk_mask(s, 0), InvalidArgument);
}

TEST(TopK, MatchesSortOracleIncludingTies) {
  SplitMix64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.below(40));
    Matrix s(n, 2);
    // Quantized values produce ties.
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<double>(rng.below(5)) / 4.0;
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(n));
    const TopKMask m = topk_mask(s, k);
    for (Eigen::Index c = 0; c < 2; ++c) {
      std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s(a, c) > s(b, c); });
      std::vector<bool> expect(static_cast<std::size_t>(n), false);
      for (std::size_t j = 0; j < k; ++j) expect[static_cast<std::size_t>(order[j])] = true;
      for (Eigen::Index i = 0; i < n; ++i) ASSERT_EQ(m(static_cast<std::size_t>(i), static_cast<std::size_t>(c)), expect[static_cast<std::size_t>(i)]);
    }
  }
  Matrix s(5, 2);
  s << 0.1, 0.9, 0.8, 0.2, 0.3, 0.7, 0.6, 0.4, 0.5, 0.5;
  const TopKMask m = topk_mask(s, 2);
  EXPECT_TRUE(m(1, 0) && m(3, 0) && m(0, 1) && m(2, 1));
  EXPECT_EQ(m.count_column(0) + m.count_column(1), 4u);
}

TEST(PointMaskTest, SelectionSemantics) {
  Matrix s(3, 2);
  s << 0.6, 0.4, 0.3, 0.7, 0.5, 0.5;
  TopKMask mk(3, 2);
  mk.set(0, 0);
  mk.set(0, 1);
  mk.set(1, 0);
  const PointMask pm = point_mask(mk, s);
  EXPECT_EQ(pm.mask, (std::vector<bool>{true, true, false}));
  EXPECT_EQ(pm.chosen_column[0], 0);
  EXPECT_EQ(pm.chosen_column[1], 0);  // only class 0 selected it, despite S favoring class 1
  EXPECT_EQ(pm.chosen_column[2], -1);
  TopKMask tie(3, 2);
  tie.set(2, 0);
  tie.set(2, 1);
  EXPECT_EQ(point_mask(tie, s).chosen_column[2], 0);
}

TEST(SparsePseudoLabels, CopiesRowsAndCountsMask) {
  Matrix s(3, 2);
  s << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
  const std::vector<int> cls{0, 2};
  PointMask none{std::vector<bool>(3, false), std::vector<int>(3, -1)};
  EXPECT_EQ(sparse_pseudo_labels(none, s, cls, 3).num_masked(), 0u);
  PointMask pm{{true, false, true}, {0, -1, 1}};
  const PseudoLabelSet p = sparse_pseudo_labels(pm, s, cls, 3);
  ASSERT_EQ(p.num_masked(), 2u);
  EXPECT_EQ(p.labels[0].probs, (std::vector<double>{0.9, 0.0, 0.1}));
  EXPECT_EQ(p.labels[0].chosen_class, 0);
  EXPECT_EQ(p.labels[1].chosen_class, 2);
}

TEST(Propagate, WellSeparatedClusters) {
  SplitMix64 rng(5);
  Matrix zu(40, 2);
  for (Eigen::Index i = 0; i < 40; ++i) {
    const double cx = i < 20 ? -5.0 : 5.0;
    zu.row(i) << cx + rng.uniform(-1, 1), rng.uniform(-1, 1);
  }
  Matrix zl(2, 2);
  zl << -5, 0, 5, 0;
  const std::vector<int> labels{0, 1};
  PropagationConfig cfg;
  cfg.sigma = 1.0;
  cfg.k_top = 3;
  const PseudoLabelSet p = propagate(zl, labels, zu, 2, cfg);
  EXPECT_EQ(p.num_masked(), 6u);
  for (const auto& pl : p.labels) {
    EXPECT_EQ(pl.chosen_class, pl.index < 20 ? 0 : 1);
    // The 3 nearest members of each cluster.
    const Eigen::Index i = static_cast<Eigen::Index>(pl.index);
    const double d = (zu.row(i) - zl.row(pl.chosen_class)).squaredNorm();
    int closer = 0;
    for (Eigen::Index j = 0; j < 40; ++j)
      if ((j < 20) == (i < 20) && (zu.row(j) - zl.row(pl.chosen_class)).squaredNorm() < d) ++closer;
    EXPECT_LT(closer, 3);
  }
}

TEST(Propagate, SingleClassAndInvariants) {
  SplitMix64 rng(6);
  const Matrix zu = random_matrix(100, 4, rng);
  const Matrix zl = random_matrix(3, 4, rng);
  const std::vector<int> one{2, 2, 2};
  const PseudoLabelSet p = propagate(zl, one, zu, 4);
  EXPECT_EQ(p.num_masked(), 32u);
  for (const auto& pl : p.labels) {
    EXPECT_EQ(pl.chosen_class, 2);
    EXPECT_EQ(pl.probs[2], 1.0);
  }
  const std::vector<int> mixed{0, 1, 3};
  PropagationConfig cfg;
  cfg.k_top = 10;
  const PseudoLabelSet q = propagate(zl, mixed, zu, 4, cfg);
  EXPECT_GE(q.num_masked(), 10u);
  EXPECT_LE(q.num_masked(), 30u);
  std::size_t masked = 0;
  for (bool b : q.point_mask) masked += b;
  EXPECT_EQ(masked, q.num_masked());
  for (const auto& pl : q.labels) {
    double sum = 0;
    for (double v : pl.probs) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(pl.probs[2], 0.0);
  }
  EXPECT_GT(q.sigma, 0.0);
}

TEST(Propagate, MatchesDenseReimplementation) {
  SplitMix64 rng(7);
  for (int t = 0; t < 100; ++t) {
    const int C = 2 + static_cast<int>(rng.below(3));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(4));
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(50));
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.below(6));
    const Matrix zl = random_matrix(m, d, rng), zu = random_matrix(n, d, rng);
    std::vector<int> labels(static_cast<std::size_t>(m));
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
    PropagationConfig cfg;
    cfg.sigma = rng.uniform(0.2, 2.0);
    cfg.k_top = 1 + rng.below(8);
    const PseudoLabelSet p = propagate(zl, labels, zu, C, cfg);
    const oracle::DenseResult ref = oracle::dense_propagate(zl, labels, zu, C, *cfg.sigma, cfg.k_top);
    ASSERT_EQ(p.point_mask, ref.mask) << "trial " << t;
    for (const auto& pl : p.labels) {
      ASSERT_EQ(pl.chosen_class, ref.chosen[pl.index]);
      for (int c = 0; c < C; ++c) ASSERT_NEAR(pl.probs[static_cast<std::size_t>(c)], ref.probs[pl.index][static_cast<std::size_t>(c)], 1e-12);
    }
  }
}

TEST(AdaptiveSigma, MeanNearestPrototypeDistance) {
  Matrix rho(2, 1);
  rho << 0, 10;
  const Prototypes p{rho, {true, true}};
  Matrix zu(4, 1);
  zu << 1, -2, 9, 13;
  EXPECT_DOUBLE_EQ(adaptive_sigma(zu, p), (1.0 + 4.0 + 1.0 + 9.0) / 4.0);
  EXPECT_EQ(adaptive_sigma(Matrix::Zero(3, 1), Prototypes{Matrix::Zero(1, 1), {true}}), 1.0);
}

TEST(LossSp, EmptyMaskIsZero) {
  PseudoLabelSet p;
  p.point_mask.assign(3, false);
  p.num_classes = 2;
  const SpLossResult r = loss_sp(p, Matrix::Constant(3, 2, 0.5));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.grad.isZero());
}

TEST(LossSp, HandValueAndStationarity) {
  const SpLossResult r = loss_sp(single_label(2, 1, {1.0, 0.0}), Matrix::Constant(2, 2, 0.5));
  EXPECT_NEAR(r.value, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(r.grad(1, 0), -0.5);
  EXPECT_DOUBLE_EQ(r.grad(1, 1), 0.5);
  EXPECT_TRUE(r.grad.row(0).isZero());

  Matrix probs(1, 3);
  probs << 0.2, 0.3, 0.5;
  const SpLossResult s = loss_sp(single_label(1, 0, {0.2, 0.3, 0.5}), probs);
  EXPECT_NEAR(s.value, -(0.2 * std::log(0.2) + 0.3 * std::log(0.3) + 0.5 * std::log(0.5)), 1e-15);
  EXPECT_LE(s.grad.cwiseAbs().maxCoeff(), 1e-17);
}

TEST(LossSp, ClampsZeroProbability) {
  Matrix probs(1, 2);
  probs << 0.0, 1.0;
  const SpLossResult r = loss_sp(single_label(1, 0, {0.6, 0.4}), probs);
  EXPECT_EQ(r.clamped, 1u);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, -0.6 * std::log(1e-12), 1e-9);
}

TEST(LossSp, GradientMatchesFiniteDifferencesThroughSoftmax) {
  SplitMix64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index n = 6, C = 3;
    PseudoLabelSet p;
    p.point_mask.assign(static_cast<std::size_t>(n), false);
    p.num_classes = C;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); i += 2) {
      std::vector<double> y(static_cast<std::size_t>(C));
      double total = 0;
      for (auto& v : y) total += (v = rng.uniform(0.05, 1.0));
      for (auto& v : y) v /= total;
      p.point_mask[i] = true;
      p.labels.push_back({i, 0, y});
    }
    const Matrix logits = random_matrix(n, C, rng, 2.0);
    const Matrix analytic = loss_sp(p, softmax(logits)).grad;
    const Matrix numeric = oracle::finite_difference([&](const Matrix& x) { return loss_sp(p, softmax(x)).value; }, logits);
    for (Eigen::Index i = 0; i < logits.size(); ++i)
      ASSERT_LE(std::abs(analytic.data()[i] - numeric.data()[i]), 1e-4 * std::max(1e-3, std::abs(numeric.data()[i])) + 1e-9);
  }
}

TEST(DenseGraph, RefusesLargeInputAndSpreadsLabels) {
  EXPECT_THROW(dense_graph_propagation(Matrix::Zero(1, 2), std::vector<int>{0}, Matrix::Zero(20001, 2), 2, 1.0),
               InvalidArgument);
  Matrix zl(2, 1);
  zl << -3, 3;
  Matrix zu(4, 1);
  zu << -3.1, -2.9, 2.9, 3.1;
  const Matrix f = dense_graph_propagation(zl, std::vector<int>{0, 1}, zu, 2, 1.0, 5);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(f.row(i).sum(), 1.0, 1e-12);
    EXPECT_EQ(f(i, 0) > f(i, 1), i < 2);
  }
}
