#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace misa;
using misa::testing::random_matrix;
using misa::testing::random_tensor;
using misa::testing::to_tensor;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Direct moment-by-moment CMD in double.
double cmd_oracle(const Matrix& x, const Matrix& y, int order, double width = 1.0) {
  const std::size_t d = x[0].size();
  auto moments = [&](const Matrix& s) {
    std::vector<std::vector<double>> out(order + 1, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < d; ++j) {
      double mu = 0.0;
      for (const auto& r : s) mu += r[j];
      mu /= double(s.size());
      out[1][j] = mu;
      for (int k = 2; k <= order; ++k) {
        double acc = 0.0;
        for (const auto& r : s) acc += std::pow(r[j] - mu, k);
        out[k][j] = acc / double(s.size());
      }
    }
    return out;
  };
  const auto mx = moments(x), my = moments(y);
  double total = 0.0;
  for (int k = 1; k <= order; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += std::pow(mx[k][j] - my[k][j], 2);
    total += std::sqrt(sq) / std::pow(width, k);
  }
  return total;
}

CmdConfig cmd_config(int order) {
  CmdConfig c;
  c.order = order;
  return c;
}

BatchRepresentations<double> invariant_only(const Matrix& l, const Matrix& v, const Matrix& a) {
  BatchRepresentations<double> r;
  r.invariant = {to_tensor(l), to_tensor(v), to_tensor(a)};
  return r;
}

}  // namespace

TEST(Cmd, IdenticalSamplesGiveZero) {
  std::mt19937_64 rng(1);
  auto x = to_tensor(random_matrix(7, 3, rng));
  EXPECT_EQ(cmd(x, x, cmd_config(5)).item(), 0.0);
}

TEST(Cmd, HandComputedSecondOrderExample) {
  auto x = to_tensor(Matrix{{0.0}, {1.0}});
  auto y = to_tensor(Matrix{{0.5}, {0.5}});
  EXPECT_DOUBLE_EQ(cmd(x, y, cmd_config(2)).item(), 0.25);
}

TEST(Cmd, DefaultOrderIsFive) { EXPECT_EQ(CmdConfig{}.order, 5); }

TEST(Cmd, FirstOrderIsDistanceOfMeans) {
  std::mt19937_64 rng(2);
  const auto xs = random_matrix(5, 4, rng), ys = random_matrix(9, 4, rng);
  double sq = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    double mx = 0.0, my = 0.0;
    for (const auto& r : xs) mx += r[j] / 5.0;
    for (const auto& r : ys) my += r[j] / 9.0;
    sq += (mx - my) * (mx - my);
  }
  EXPECT_NEAR(cmd(to_tensor(xs), to_tensor(ys), cmd_config(1)).item(), std::sqrt(sq), 1e-12);
}

TEST(Cmd, SymmetricNonNegativeAndMatchesOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int order = 1 + trial % 5;
    const auto xs = random_matrix(2 + trial % 7, 3, rng), ys = random_matrix(3 + trial % 4, 3, rng);
    const double a = cmd(to_tensor(xs), to_tensor(ys), cmd_config(order)).item();
    const double b = cmd(to_tensor(ys), to_tensor(xs), cmd_config(order)).item();
    EXPECT_EQ(a, b);
    EXPECT_GE(a, 0.0);
    EXPECT_NEAR(a, cmd_oracle(xs, ys, order), 1e-9);
  }
}

TEST(Cmd, WidthScalingFollowsInterval) {
  std::mt19937_64 rng(4);
  auto xs = random_matrix(6, 2, rng, 0.0, 2.0), ys = random_matrix(4, 2, rng, 0.0, 2.0);
  CmdConfig c;
  c.order = 4;
  c.upper = 2.0;
  EXPECT_NEAR(cmd(to_tensor(xs), to_tensor(ys), c).item(), cmd_oracle(xs, ys, 4, 2.0), 1e-12);
  c.scale_by_width = false;
  EXPECT_NEAR(cmd(to_tensor(xs), to_tensor(ys), c).item(), cmd_oracle(xs, ys, 4, 1.0), 1e-12);
}

TEST(Cmd, RejectsOutOfIntervalAndMismatchedDims) {
  auto ok = to_tensor(Matrix{{0.2, 0.3}});
  EXPECT_THROW(cmd(to_tensor(Matrix{{0.2, 1.1}}), ok, cmd_config(2)), std::domain_error);
  EXPECT_NO_THROW(cmd(to_tensor(Matrix{{0.2, 1.0 + 5e-7}}), ok, cmd_config(2)));
  EXPECT_THROW(cmd(to_tensor(Matrix{{0.2}}), ok, cmd_config(2)), ShapeError);
  EXPECT_THROW(cmd(ok, ok, cmd_config(0)), ConfigError);
}

TEST(Similarity, IdenticalInvariantsGiveZero) {
  std::mt19937_64 rng(5);
  const auto h = random_matrix(4, 3, rng);
  EXPECT_EQ(similarity_loss(invariant_only(h, h, h), cmd_config(5)).item(), 0.0);
}

TEST(Similarity, TwoIdenticalOneDistinctMatchesPairwiseOracle) {
  std::mt19937_64 rng(6);
  const auto h = random_matrix(4, 3, rng), g = random_matrix(4, 3, rng);
  const double pair = cmd_oracle(h, g, 5);
  // l and v identical; a distinct: pairs (l,a), (l,v), (a,v) -> pair, 0, pair
  EXPECT_NEAR(similarity_loss(invariant_only(h, h, g), cmd_config(5)).item(), 2.0 * pair / 3.0,
              1e-12);
}

TEST(Similarity, InvariantToModalityRelabeling) {
  std::mt19937_64 rng(7);
  const auto a = random_matrix(5, 3, rng), b = random_matrix(5, 3, rng), c = random_matrix(5, 3, rng);
  const double base = similarity_loss(invariant_only(a, b, c), cmd_config(3)).item();
  EXPECT_NEAR(similarity_loss(invariant_only(b, c, a), cmd_config(3)).item(), base, 1e-12);
  EXPECT_NEAR(similarity_loss(invariant_only(c, a, b), cmd_config(3)).item(), base, 1e-12);
  EXPECT_NEAR(similarity_loss(invariant_only(a, c, b), cmd_config(3)).item(), base, 1e-12);
}

TEST(Similarity, NeedsTwoModalities) {
  BatchRepresentations<double> r;
  r.invariant[0] = to_tensor(Matrix{{0.5}});
  EXPECT_THROW(similarity_loss(r, cmd_config(5)), ConfigError);
}

namespace {

// Centre columns, scale rows to unit length (zero rows stay zero).
Matrix normalized(Matrix h) {
  const std::size_t n = h.size(), d = h[0].size();
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (const auto& r : h) mu += r[j];
    mu /= double(n);
    for (auto& r : h) r[j] -= mu;
  }
  for (auto& r : h) {
    double norm = 0.0;
    for (double v : r) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& v : r) v /= norm;
  }
  return h;
}

double cross_frobenius(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a[0].size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double dot = 0.0;
      for (std::size_t n = 0; n < a.size(); ++n) dot += a[n][i] * b[n][j];
      total += dot * dot;
    }
  }
  return total;
}

}  // namespace

TEST(Difference, HandExampleMatchesDoubleLoop) {
  BatchRepresentations<double> r;
  r.invariant[0] = to_tensor(Matrix{{1, 0}, {-1, 0}});
  r.specific[0] = to_tensor(Matrix{{0, 1}, {0, -1}});
  // H_c^T H_p = [[0, 2], [0, 0]]
  EXPECT_DOUBLE_EQ(difference_loss(r).item(), 4.0);
}

TEST(Difference, ConstantSpecificMatrixContributesNothing) {
  std::mt19937_64 rng(8);
  BatchRepresentations<double> r;
  r.invariant[0] = to_tensor(random_matrix(5, 3, rng));
  r.specific[0] = to_tensor(Matrix(5, std::vector<double>{0.3, -0.2, 0.9}));
  EXPECT_EQ(difference_loss(r).item(), 0.0);
}

TEST(Difference, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(9);
  std::array<Matrix, 3> c, p;
  BatchRepresentations<double> r, shuffled;
  std::vector<std::size_t> order = {3, 0, 5, 1, 4, 2};
  for (std::size_t m = 0; m < 3; ++m) {
    c[m] = random_matrix(6, 4, rng, -1, 1);
    p[m] = random_matrix(6, 4, rng, -1, 1);
    r.invariant[m] = to_tensor(c[m]);
    r.specific[m] = to_tensor(p[m]);
    Matrix cs, ps;
    for (auto i : order) {
      cs.push_back(c[m][i]);
      ps.push_back(p[m][i]);
    }
    shuffled.invariant[m] = to_tensor(cs);
    shuffled.specific[m] = to_tensor(ps);
  }
  double expect = 0.0;
  for (std::size_t m = 0; m < 3; ++m) expect += cross_frobenius(normalized(c[m]), normalized(p[m]));
  for (auto [a, b] : {std::pair{0, 2}, std::pair{0, 1}, std::pair{2, 1}}) {
    expect += cross_frobenius(normalized(p[a]), normalized(p[b]));
  }
  const double got = difference_loss(r).item();
  EXPECT_NEAR(got, expect, 1e-10);
  EXPECT_NEAR(difference_loss(shuffled).item(), got, 1e-10);
}

TEST(Difference, SingleRowBatchIsFlaggedDegenerate) {
  BatchRepresentations<double> r;
  r.invariant[1] = to_tensor(Matrix{{0.1, 0.7}});
  r.specific[1] = to_tensor(Matrix{{0.4, -0.2}});
  bool degenerate = false;
  EXPECT_EQ(difference_loss(r, &degenerate).item(), 0.0);
  EXPECT_TRUE(degenerate);
}

TEST(Reconstruction, PerfectReconstructionIsZero) {
  std::mt19937_64 rng(10);
  BatchRepresentations<double> r;
  for (std::size_t m = 0; m < 3; ++m) {
    r.utterance[m] = random_tensor({3, 4}, rng);
    r.reconstruction[m] = r.utterance[m];
  }
  EXPECT_EQ(reconstruction_loss(r).item(), 0.0);
}

TEST(Reconstruction, HandExample) {
  BatchRepresentations<double> r;
  for (std::size_t m = 0; m < 3; ++m) {
    r.utterance[m] = to_tensor(Matrix{{1, 0, 0, 0}});
    r.reconstruction[m] = to_tensor(Matrix{{0, 0, 0, 0}});
  }
  EXPECT_DOUBLE_EQ(reconstruction_loss(r).item(), 0.25);
}

TEST(Reconstruction, ShapeMismatchIsAnError) {
  BatchRepresentations<double> r;
  r.utterance[0] = to_tensor(Matrix{{1, 0}});
  r.reconstruction[0] = to_tensor(Matrix{{1, 0, 0}});
  EXPECT_THROW(reconstruction_loss(r), ShapeError);
}

TEST(TaskLoss, RegressionExamples) {
  const double labels[] = {1.0};
  EXPECT_DOUBLE_EQ(task_loss(to_tensor(Matrix{{0.5}}), labels, TaskKind::regression).item(), 0.25);
  const double many[] = {0.5, -1.5, 2.0};
  EXPECT_EQ(task_loss(to_tensor(Matrix{{0.5}, {-1.5}, {2.0}}), many, TaskKind::regression).item(),
            0.0);
}

TEST(TaskLoss, ClassificationExamples) {
  const double zero[] = {0.0};
  EXPECT_NEAR(task_loss(to_tensor(Matrix{{0, 0}}), zero, TaskKind::classification).item(),
              std::log(2.0), 1e-12);
  const double labels[] = {2.0, 0.0};
  const Matrix logits = {{0.1, -0.3, 1.2}, {2.0, 0.5, -1.0}};
  double expect = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v);
    expect -= std::log(std::exp(logits[i][std::size_t(labels[i])]) / z) / 2.0;
  }
  EXPECT_NEAR(task_loss(to_tensor(logits), labels, TaskKind::classification).item(), expect,
              1e-12);
}

TEST(TaskLoss, RejectsInvalidClassIndex) {
  for (double bad : {2.0, -1.0, 0.5}) {
    const double labels[] = {bad};
    EXPECT_THROW(task_loss(to_tensor(Matrix{{0, 0}}), labels, TaskKind::classification),
                 LabelError);
  }
  const double two[] = {0.0, 1.0};
  EXPECT_THROW(task_loss(to_tensor(Matrix{{0, 0}}), two, TaskKind::classification), ShapeError);
}

TEST(TotalLoss, WeightedArithmetic) {
  const auto r = total_loss<double>({1, 2, 3, 4, 0}, {0.5, 0.5, 0.5});
  EXPECT_EQ(r.total, 5.5);
  EXPECT_EQ(r.task, 1.0);
}

TEST(TotalLoss, ZeroWeightsLeaveTaskOnly) {
  const auto r = total_loss<float>({0.123, 4.5, 6.7, 8.9, 0}, {0.0, 0.0, 0.0});
  EXPECT_EQ(r.total, double(float(0.123)));
}

TEST(TotalLoss, MosiDefaults) {
  LossWeights w;
  EXPECT_EQ(w.alpha, 1.0);
  EXPECT_EQ(w.beta, 0.3);
  EXPECT_EQ(w.gamma, 1.0);
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  try {
    total_loss<float>({1, 2, NAN, 4, 0}, {});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("diff"), std::string::npos);
  }
  EXPECT_THROW(total_loss<float>({INFINITY, 0, 0, 0, 0}, {}), NumericalError);
  EXPECT_THROW((LossWeights{-0.1, 0, 0}.validate()), ConfigError);
}

namespace {

struct VariantCase {
  Variant variant;
  bool sim, diff, recon;
};

class CompositeLoss : public ::testing::TestWithParam<VariantCase> {};

}  // namespace

TEST_P(CompositeLoss, ComponentsFollowVariantAndTotalIsBitExact) {
  const auto param = GetParam();
  auto synth = misa::testing::tiny_synth();
  auto data = generate_synthetic(synth);
  auto model_cfg = misa::testing::tiny_model(synth, param.variant);
  MisaModel<float> model(model_cfg, 3);
  std::vector<const MultimodalExample*> ptrs;
  for (std::size_t i = 0; i < 6; ++i) ptrs.push_back(&data.train[i]);
  const auto batch = make_batch(ptrs);
  auto fwd = model.forward(batch, Mode::eval);
  const LossWeights w{0.7, 0.3, 1.1};
  const auto terms = model.loss(fwd, batch, w, CmdConfig{});
  EXPECT_EQ(terms.report.sim != 0.0, param.sim);
  EXPECT_EQ(terms.report.diff != 0.0, param.diff);
  EXPECT_EQ(terms.report.recon != 0.0, param.recon);
  EXPECT_EQ(static_cast<float>(terms.report.total), terms.total.item());
  EXPECT_EQ(terms.report.total, total_loss<float>(terms.report, w).total);
}

INSTANTIATE_TEST_SUITE_P(
    Variants, CompositeLoss,
    ::testing::Values(VariantCase{Variant::full, true, true, true},
                      VariantCase{Variant::base, false, false, false},
                      VariantCase{Variant::inv, true, false, true},
                      VariantCase{Variant::sfusion, true, true, true},
                      VariantCase{Variant::ifusion, true, true, true}),
    [](const auto& info) { return std::string(name(info.param.variant)); });

TEST(LossGradients, EachComponentPassesGradCheck) {
  std::mt19937_64 rng(12);
  BatchRepresentations<double> r;
  NamedTensors<double> leaves;
  for (std::size_t m = 0; m < 3; ++m) {
    r.invariant[m] = random_tensor({5, 3}, rng, 0.1, 0.9, true);
    r.specific[m] = random_tensor({5, 3}, rng, -1, 1, true);
    r.utterance[m] = random_tensor({5, 3}, rng, -1, 1, true);
    r.reconstruction[m] = random_tensor({5, 3}, rng, -1, 1, true);
    const std::string t(1, tag(kModalities[m]));
    leaves.push_back({"c_" + t, r.invariant[m]});
    leaves.push_back({"p_" + t, r.specific[m]});
    leaves.push_back({"u_" + t, r.utterance[m]});
    leaves.push_back({"r_" + t, r.reconstruction[m]});
  }
  auto preds = random_tensor({5, 2}, rng, -1, 1, true);
  const double labels[] = {0, 1, 1, 0, 1};
  leaves.push_back({"logits", preds});
  auto check = [&](auto f) {
    const auto report = grad_check<double>(f, leaves, 1e-6, 1e-3);
    for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
  };
  check([&] { return similarity_loss(r, cmd_config(5)); });
  check([&] { return difference_loss(r); });
  check([&] { return reconstruction_loss(r); });
  check([&] { return task_loss(preds, labels, TaskKind::classification); });
  check([&] {
    return composite_loss(r, preds, labels, TaskKind::classification, Variant::full,
                          LossWeights{1.0, 0.3, 1.0}, cmd_config(5))
        .total;
  });
}
