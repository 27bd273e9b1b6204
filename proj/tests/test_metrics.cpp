#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sasg/metrics.hpp"

using namespace sasg;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::vector<WorkerDecision> decisions(int communicating, int total) {
  std::vector<WorkerDecision> ds(static_cast<std::size_t>(total));
  for (int m = 0; m < communicating; ++m) ds[static_cast<std::size_t>(m)].communicated = true;
  return ds;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Accounting, UncompressedRound) {
  const auto c = account_iteration(decisions(10, 10), 1000, 1000, 10);
  EXPECT_EQ(c.rounds, 10);
  EXPECT_EQ(c.bits_paper, 10LL * 32 * 1000);
  EXPECT_EQ(c.bits_realistic, 10LL * 1000 * (32 + 10));
}

TEST(Accounting, SparseRound) {
  const auto c = account_iteration(decisions(10, 10), 10, 1000, 10);
  EXPECT_EQ(c.bits_paper, 10 * 320);
}

TEST(Accounting, NobodyCommunicates) {
  EXPECT_EQ(account_iteration(decisions(0, 4), 3, 50, 4), (CommCount{0, 0, 0}));
  EXPECT_THROW(account_iteration(decisions(0, 5), 3, 50, 4), std::invalid_argument);
}

TEST(Accounting, IndexBits) {
  EXPECT_EQ(index_bits(1), 0);
  EXPECT_EQ(index_bits(2), 1);
  EXPECT_EQ(index_bits(1024), 10);
  EXPECT_EQ(index_bits(1025), 11);
  EXPECT_EQ(index_bits(407050), 19);
}

TEST(Emit, ColumnOrder) {
  EXPECT_EQ(csv_header(), "t,loss,acc,rounds,cum_rounds,bits_paper,bits_real,grad_norm_sq,nu_residual,lyapunov");
  MetricsRecord r;
  r.t = 3;
  r.loss = 0.5;
  r.rounds_this_iter = 2;
  r.cum_rounds = 7;
  r.cum_bits_paper = 224;
  r.cum_bits_realistic = 300;
  r.nu_residual = 0.25;
  EXPECT_EQ(csv_row(r), "3,0.5,,2,7,224,300,,0.25,");
}

TEST(Emit, EmptyRun) {
  const auto dir = std::filesystem::temp_directory_path() / "sasg_emit_test";
  std::filesystem::create_directories(dir);
  const std::string csv = (dir / "m.csv").string();
  write_csv(csv, {});
  EXPECT_EQ(slurp(csv), csv_header() + "\n");
  const auto s = make_summary({}, nlohmann::json::object(), {}, 0, std::nullopt);
  EXPECT_EQ(s["totals"]["rounds"], 0);
  EXPECT_EQ(s["totals"]["bits_paper"], 0);
  EXPECT_TRUE(s["checkpoints"].empty());
  EXPECT_THROW(write_csv("/nonexistent/dir/m.csv", {}), std::runtime_error);
}

TEST(Emit, SummaryTotalsMatchLastRow) {
  std::vector<MetricsRecord> rs(3);
  for (int i = 0; i < 3; ++i) {
    rs[static_cast<std::size_t>(i)].t = i;
    rs[static_cast<std::size_t>(i)].cum_rounds = 4 * (i + 1);
    rs[static_cast<std::size_t>(i)].cum_bits_paper = 128 * (i + 1);
    rs[static_cast<std::size_t>(i)].cum_bits_realistic = 150 * (i + 1);
  }
  rs[1].test_accuracy = 0.75;
  const auto s = make_summary(rs, {{"x", 1}}, {}, 96, 0.8);
  EXPECT_EQ(s["totals"]["rounds"], 12);
  EXPECT_EQ(s["totals"]["bits_paper"], 384);
  EXPECT_EQ(s["totals"]["bits_realistic"], 450);
  EXPECT_EQ(s["table"]["# Rounds"], 12);
  EXPECT_EQ(s["table"]["# Bits"], 384);
  EXPECT_EQ(s["final"]["test_accuracy"], 0.8);
  ASSERT_EQ(s["checkpoints"].size(), 1u);
  EXPECT_EQ(s["checkpoints"][0]["cum_rounds"], 8);
  EXPECT_EQ(s["config"]["x"], 1);
}

TEST(AuxSequence, UncompressedResidualIsZero) {
  // e == 0, so nu == w and the recursion is the update rule itself.
  const ParamVector w0 = vec({1, -2, 0.5});
  const std::vector<ParamVector> zero(2, ParamVector::Zero(3));
  AuxTracker tr = make_aux_tracker(w0, zero);
  const std::vector<ParamVector> grads{vec({0.2, 0.4, -1}), vec({1, 0, 0.5})};
  const double gamma = 0.1;
  ParamVector w1(3);
  for (Index i = 0; i < 3; ++i) w1[i] = w0[i] - (gamma * grads[0][i] + gamma * grads[1][i]) / 2.0;
  const std::vector<std::optional<ParamVector>> no_skip(2);
  EXPECT_LT(check_nu_recursion(tr, w1, w0, zero, grads, no_skip, gamma, 2), 1e-15);
  EXPECT_EQ(tr.nu, w1);
}

TEST(AuxSequence, SingleWorkerHandTrace) {
  // Identity quadratic (grad = w), M = 1, k = 1, lr = 0.5, w0 = [2, 1]:
  //   t=0: g = [1, 0.5]  -> send (0, 1),  e = [0, 0.5], w1 = [1, 1],  nu1 = [1, 0.5]
  //   t=1: g = [0.5, 1]  -> send (1, 1),  e = [0.5, 0], w2 = [1, 0],  nu2 = [0.5, 0]
  // nu steps [-1, -0.5] and [-0.5, -0.5] equal -lr * grad exactly.
  const std::vector<std::optional<ParamVector>> no_skip(1);
  AuxTracker tr = make_aux_tracker(vec({2, 1}), std::vector<ParamVector>{vec({0, 0})});
  const std::vector<ParamVector> e1{vec({0, 0.5})}, e2{vec({0.5, 0})};
  const std::vector<ParamVector> g0{vec({2, 1})}, g1{vec({1, 1})};
  EXPECT_LT(check_nu_recursion(tr, vec({1, 1}), vec({2, 1}), e1, g0, no_skip, 0.5, 1), 1e-12);
  EXPECT_EQ(tr.nu, vec({1, 0.5}));
  EXPECT_LT(check_nu_recursion(tr, vec({1, 0}), vec({1, 1}), e2, g1, no_skip, 0.5, 1), 1e-12);
  EXPECT_EQ(tr.nu, vec({0.5, 0}));
}

// The two-worker trace from the server tests, second step (worker 0 skips).
//   nu1 = [1.5, 0] - ([0, -0.5] + [0, -2]) / 2 = [1.5, 1.25]
//   nu2 = [0, 0]   - ([0, -0.5] + [0, -4]) / 2 = [0, 2.25]       -> step [-1.5, 1]
//   -(1/2)(fresh0 + fresh1) + (1/2) delta0 = -(1/2)[4.5, -2.5] + (1/2)[1.5, 0] = [-1.5, 1.25]
// The skipper's residual memory moved since its upload (from 0 to [0, -0.5]);
// adding (1/M)(e_now - e_at_upload) = [0, -0.25] closes the gap.
TEST(AuxSequence, SkipperDriftTerm) {
  const ParamVector nu1 = vec({1.5, 1.25}), nu2 = vec({0, 2.25});
  const std::vector<ParamVector> fresh{vec({0.5, -0.5}), vec({4, -2})};
  const std::vector<std::optional<ParamVector>> deltas{vec({1.5, 0}), std::nullopt};
  const std::vector<std::optional<ParamVector>> drifts{vec({0, -0.5}), std::nullopt};
  EXPECT_DOUBLE_EQ(nu_recursion_residual(nu1, nu2, fresh, deltas, 1.0, 2), 0.25);
  EXPECT_EQ(nu_recursion_residual(nu1, nu2, fresh, deltas, 1.0, 2, drifts), 0.0);
  EXPECT_EQ(auxiliary_point(vec({1.5, 0}), std::vector<ParamVector>{vec({0, -0.5}), vec({0, -2})}), nu1);
  EXPECT_DOUBLE_EQ(nu_tolerance(vec({3, 4})), 6e-9);
}

TEST(ErrorBound, Basics) {
  EXPECT_EQ(error_bound(0.1, 10, 10, 5.0), 0.0);
  EXPECT_DOUBLE_EQ(error_bound(0.5, 1, 4, 2.0), 4.0 * 0.75 / 0.0625 * 0.25 * 4.0);
  std::vector<WorkerState> ws(2);
  ws[0].error = ParamVector::Zero(4);
  ws[1].error = ParamVector::Zero(4);
  const std::vector<double> b{0.0, 0.0};
  EXPECT_EQ(check_error_bound(ws, 0.1, 4, 4, b), (std::vector<bool>{true, true}));
  ws[1].error = vec({1, 0, 0, 0});
  EXPECT_EQ(check_error_bound(ws, 0.1, 4, 4, b), (std::vector<bool>{true, false}));
  const std::vector<double> b2{1.0, 10.0};
  EXPECT_EQ(check_error_bound(ws, 0.1, 1, 4, b2), (std::vector<bool>{true, true}));
}

TEST(LyapunovWeights, ClosedFormSingleDelay) {
  const std::vector<double> alphas{0.0};
  EXPECT_DOUBLE_EQ(lyapunov_beta1_closed_form(alphas, 1, 1.0, 0.1), 0.5);
  const auto betas = lyapunov_betas(alphas, 1, 1.0, 0.1);
  ASSERT_EQ(betas.size(), 1u);
  EXPECT_DOUBLE_EQ(betas[0], 0.5);
}

TEST(LyapunovWeights, BackSubstitutionClosesTheSystem) {
  const std::vector<double> alphas{3.0, 1.0, 0.5, 2.0};
  const int M = 3;
  const double L = 2.5, g = 0.05;
  const auto b = lyapunov_betas(alphas, M, L, g);
  const double m2 = 9.0;
  // beta_d - beta_{d+1} = alpha_d/(2 M^2 L) + L/2 + 2 g^2 alpha_d (L + 1 + 4 beta_1)/M^2, beta_{D+1} = 0
  for (std::size_t d = 0; d < alphas.size(); ++d) {
    const double next = d + 1 < alphas.size() ? b[d + 1] : 0.0;
    const double c = alphas[d] / (2 * m2 * L) + L / 2 + 2 * g * g * alphas[d] * (L + 1 + 4 * b[0]) / m2;
    EXPECT_NEAR(b[d] - next, c, 1e-12 * b[0]);
  }
  EXPECT_NEAR(b[0], lyapunov_beta1_closed_form(alphas, M, L, g), 1e-12 * b[0]);
  for (std::size_t d = 1; d < b.size(); ++d) EXPECT_GT(b[d - 1], b[d]);
}

TEST(LyapunovWeights, InfeasibleStepSize) {
  const std::vector<double> alphas(10, 100.0);
  EXPECT_THROW(lyapunov_betas(alphas, 1, 1.0, 0.05), std::invalid_argument);
  EXPECT_THROW(lyapunov_betas(std::vector<double>{}, 1, 1.0, 0.05), std::invalid_argument);
}

TEST(LyapunovValue, ZeroAtOptimumWithFlatHistory) {
  StepHistory h(3);
  const std::vector<double> betas{3, 2, 1};
  EXPECT_EQ(lyapunov_value(1.25, 1.25, h, betas), 0.0);
  h.push(0.0);
  h.push(0.0);
  EXPECT_EQ(lyapunov_value(1.25, 1.25, h, betas), 0.0);
  h.push(2.0);
  EXPECT_EQ(lyapunov_value(1.25, 1.0, h, betas), 0.25 + 3 * 2.0);
}
