#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "sasg/config.hpp"
#include "sasg/rng.hpp"
#include "sasg/server.hpp"
#include "sasg/worker.hpp"

using namespace sasg;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

DataShard shard_of(std::shared_ptr<const Dataset> data, std::vector<Index> rows, int owner = 0) {
  DataShard s;
  s.owner = owner;
  s.data = std::move(data);
  s.rows = std::move(rows);
  s.seed = 42;
  return s;
}

// Independent logistic gradient: mean over rows of -y x / (1 + exp(y x.w)).
ParamVector logistic_grad_reference(const Dataset& data, const std::vector<Index>& rows, const ParamVector& w) {
  ParamVector g = ParamVector::Zero(w.size());
  for (Index r : rows) {
    const double y = data.labels[static_cast<std::size_t>(r)] > 0 ? 1.0 : -1.0;
    double z = 0.0;
    for (Index j = 0; j < w.size(); ++j) z += data.features(r, j) * w[j];
    for (Index j = 0; j < w.size(); ++j) g[j] += -y * data.features(r, j) / (1.0 + std::exp(y * z));
  }
  return g / static_cast<double>(rows.size());
}

}  // namespace

TEST(RuleLhs, ZeroWhenSnapshotIsCurrent) {
  auto data = make_blobs(20, 3, 2, 1.0, 1);
  WorkerState s = make_worker(0, shard_of(data, {0, 1, 2, 3, 4}), vec({0.1, -0.2, 0.3}), 0.1);
  EXPECT_EQ(rule_lhs(s, make_logistic_task(3), vec({0.1, -0.2, 0.3}), Batch{{0, 2, 4}}), 0.0);
}

TEST(RuleLhs, IdentityQuadraticGivesParameterDistance) {
  const auto q = make_identity_quadratic(4, 6);
  const ParamVector snap = vec({1, 2, 3, 4});
  const ParamVector now = vec({0.5, -1, 3.25, 7});
  WorkerState s = make_worker(0, shard_of(q.data, {0, 1, 2, 3, 4, 5}), snap, 0.1);
  EXPECT_EQ(rule_lhs(s, q.task, now, Batch{{1, 3}}), sq_distance(now, snap));
  EXPECT_EQ(s.fresh_grad, now);
}

TEST(RuleLhs, LogisticAgainstDuplicateImplementation) {
  auto data = make_blobs(50, 6, 2, 1.0, 3);
  auto rng = keyed_rng({5});
  std::normal_distribution<double> n(0.0, 1.0);
  ParamVector snap(6), now(6);
  for (auto& v : snap) v = n(rng);
  for (auto& v : now) v = n(rng);
  std::vector<Index> rows(50);
  std::iota(rows.begin(), rows.end(), Index{0});
  WorkerState s = make_worker(0, shard_of(data, rows), snap, 0.1);
  const Batch batch{{3, 8, 8, 21, 40}};
  const std::vector<Index> picked{3, 8, 8, 21, 40};
  const double expect =
      (logistic_grad_reference(*data, picked, now) - logistic_grad_reference(*data, picked, snap)).squaredNorm();
  EXPECT_NEAR(rule_lhs(s, make_logistic_task(6), now, batch), expect, 1e-10);
}

TEST(RuleLhs, LagRuleComparesAgainstUploadedGradient) {
  const auto q = make_identity_quadratic(2, 2);
  WorkerState s = make_worker(0, shard_of(q.data, {0, 1}), vec({0, 0}), 1.0);
  EXPECT_THROW(rule_lhs(s, q.task, vec({1, 1}), Batch{{0}}, SelectionRule::lag), std::logic_error);
  s.track_history = true;
  EXPECT_EQ(rule_lhs(s, q.task, vec({1, 1}), Batch{{0}}, SelectionRule::lag), 0.0);
  make_payload(s, s.fresh_grad, 2, vec({1, 1}));
  EXPECT_EQ(rule_lhs(s, q.task, vec({3, 1}), Batch{{1}}, SelectionRule::lag), 4.0);
}

TEST(Decide, Boundaries) {
  WorkerState s;
  s.tau = 1;
  auto d = decide(s, 0.0, 0.0, 10, 5);
  EXPECT_FALSE(d.communicated);
  d = decide(s, 5.0, 1.0, 10, 5);
  EXPECT_TRUE(d.communicated);
  EXPECT_FALSE(d.forced);
  s.tau = 10;
  d = decide(s, 0.0, 10.0, 10, 5);
  EXPECT_TRUE(d.communicated);
  EXPECT_TRUE(d.forced);
  s.tau = 1;
  d = decide(s, 0.0, 10.0, 10, 0);
  EXPECT_TRUE(d.communicated);
  EXPECT_FALSE(d.forced);
  EXPECT_THROW(decide(s, 1.0, -1.0, 10, 3), std::invalid_argument);
}

TEST(Payload, LosslessWhenKIsD) {
  WorkerState s;
  s.error = vec({0.5, -0.5, 0});
  s.lr = 0.1;
  s.tau = 4;
  const ParamVector fresh = vec({1, 2, 3});
  const auto p = make_payload(s, fresh, 3, vec({9, 9, 9}));
  EXPECT_EQ(densify(p), axpy(0.1, fresh, vec({0.5, -0.5, 0})));
  EXPECT_EQ(s.error, ParamVector::Zero(3));
  EXPECT_EQ(s.tau, 1);
  EXPECT_EQ(s.snapshot, vec({9, 9, 9}));
}

TEST(Payload, TopTwoFromZeroError) {
  WorkerState s;
  s.error = ParamVector::Zero(4);
  s.lr = 1.0;
  const auto p = make_payload(s, vec({3, -5, 2, 0}), 2, ParamVector::Zero(4));
  EXPECT_EQ(p.indices, (std::vector<Index>{0, 1}));
  EXPECT_EQ(p.values, (std::vector<double>{3, -5}));
  EXPECT_EQ(s.error, vec({0, 0, 2, 0}));
}

TEST(Payload, ErrorFeedbackDelaysSuppressedCoordinate) {
  // Fixed gradient [1, 0.6], k = 1, lr = 1:
  //   upload 1: g = [1, 0.6]   -> send (0, 1),   e = [0, 0.6]
  //   upload 2: g = [1, 1.2]   -> send (1, 1.2), e = [1, 0]
  WorkerState s;
  s.error = ParamVector::Zero(2);
  s.lr = 1.0;
  const ParamVector grad = vec({1, 0.6});
  auto p = make_payload(s, grad, 1, ParamVector::Zero(2));
  EXPECT_EQ(p.indices, (std::vector<Index>{0}));
  EXPECT_EQ(p.values, (std::vector<double>{1.0}));
  EXPECT_EQ(s.error, vec({0, 0.6}));
  p = make_payload(s, grad, 1, ParamVector::Zero(2));
  EXPECT_EQ(p.indices, (std::vector<Index>{1}));
  EXPECT_EQ(p.values, (std::vector<double>{1.2}));
  EXPECT_EQ(s.error, vec({1, 0}));
}

TEST(Payload, ConservationIsExact) {
  auto rng = keyed_rng({8});
  std::normal_distribution<double> n(0.0, 1.0);
  WorkerState s;
  s.error = ParamVector::Zero(30);
  s.lr = 0.37;
  for (int rep = 0; rep < 50; ++rep) {
    ParamVector fresh(30);
    for (auto& v : fresh) v = n(rng);
    const ParamVector before = s.error;
    const auto p = make_payload(s, fresh, 1 + rep % 30, ParamVector::Zero(30));
    ASSERT_EQ(densify(p) + s.error, axpy(0.37, fresh, before));
  }
}

TEST(Skip, CountsStalenessOnly) {
  WorkerState s = make_worker(3, DataShard{}, vec({1, 2}), 0.1);
  s.error = vec({0.25, -1});
  for (int i = 0; i < 5; ++i) skip(s, 10);
  EXPECT_EQ(s.tau, 6);
  EXPECT_EQ(s.error, vec({0.25, -1}));
  EXPECT_EQ(s.snapshot, vec({1, 2}));
  s.tau = 10;
  EXPECT_THROW(skip(s, 10), std::logic_error);
}

TEST(Skip, MaxDelayForcesUpload) {
  WorkerState s;
  s.tau = 1;
  const int D = 4;
  for (int i = 0; i < D - 1; ++i) {
    ASSERT_FALSE(decide(s, 0.0, 1.0, D, 1 + i).communicated);
    skip(s, D);
  }
  const auto d = decide(s, 0.0, 1.0, D, 9);
  EXPECT_TRUE(d.communicated);
  EXPECT_TRUE(d.forced);
}

TEST(StepHistory, RingBuffer) {
  StepHistory h(3);
  EXPECT_EQ(h.size(), 0);
  EXPECT_THROW(h.at(1), std::out_of_range);
  for (double v : {1.0, 2.0, 3.0, 4.0}) h.push(v);
  EXPECT_EQ(h.size(), 3);
  EXPECT_EQ(h.at(1), 4.0);
  EXPECT_EQ(h.at(3), 2.0);
  EXPECT_THROW(h.at(4), std::out_of_range);
}

TEST(Server, ThresholdArithmetic) {
  ServerState s = make_server(ParamVector::Zero(2), 2, 1, {4.0});
  EXPECT_EQ(rule_rhs(s), 0.0);
  s.diff_history.push(1.0);
  EXPECT_EQ(rule_rhs(s), 1.0);

  const auto alphas = resolve_alphas("1/(2gamma)", 0.005, 10);
  ASSERT_EQ(alphas.size(), 10u);
  for (double a : alphas) EXPECT_DOUBLE_EQ(a, 100.0);
  EXPECT_THROW(make_server(ParamVector::Zero(2), 2, 2, {1.0}), std::invalid_argument);
  EXPECT_THROW(make_server(ParamVector::Zero(2), 2, 1, {-1.0}), std::invalid_argument);
}

TEST(Server, BroadcastIsAPureCopy) {
  ServerState s = make_server(vec({1.5, -2}), 1, 1, {0.0});
  const ParamVector b = broadcast(s);
  EXPECT_EQ(b, s.w);
  EXPECT_EQ(s.diff_history.size(), 0);
  EXPECT_EQ(downlink_bits(1000), 32000);
}

TEST(Server, SingleWorkerUncompressedStepIsSgd) {
  auto data = make_blobs(40, 5, 2, 1.0, 4);
  std::vector<Index> rows(40);
  std::iota(rows.begin(), rows.end(), Index{0});
  const Task task = make_logistic_task(5);
  const ParamVector w0 = vec({0.1, 0.2, -0.3, 0.4, 0.0});
  ServerState server = make_server(w0, 1, 1, {0.0});
  WorkerState worker = make_worker(0, shard_of(data, rows), w0, 0.05);
  const Batch batch{{1, 5, 9}};
  std::vector<WorkerDecision> ds{worker_turn(worker, task, w0, batch, rule_rhs(server), 1, 0, 5)};
  aggregate_and_step(server, ds);
  const ParamVector g = gradient(task, w0, batch, worker.shard);
  ParamVector expect(5);
  for (Index i = 0; i < 5; ++i) expect[i] = w0[i] - (0.05 * g[i] + 0.0) / 1.0;
  EXPECT_EQ(server.w, expect);
  EXPECT_EQ(server.diff_history.at(1), sq_distance(expect, w0));
  EXPECT_FALSE(ds[0].payload.has_value());
}

TEST(Server, StaleUpdatesAreReapplied) {
  ServerState s = make_server(vec({0, 0}), 2, 5, std::vector<double>(5, 1.0));
  std::vector<WorkerDecision> first(2);
  first[0].communicated = first[1].communicated = true;
  first[0].payload = SparseUpdate<double>{2, {0}, {2.0}};
  first[1].payload = SparseUpdate<double>{2, {1}, {4.0}};
  aggregate_and_step(s, first);
  EXPECT_EQ(s.w, vec({-1, -2}));
  std::vector<WorkerDecision> none(2);
  aggregate_and_step(s, none);
  EXPECT_EQ(s.w, vec({-2, -4}));
  EXPECT_EQ(s.diff_history.at(1), 5.0);

  ServerState fresh = make_server(vec({0, 0}), 2, 5, std::vector<double>(5, 1.0));
  std::vector<WorkerDecision> bad(2);
  EXPECT_THROW(aggregate_and_step(fresh, bad), std::logic_error);
  std::vector<WorkerDecision> short_list(1);
  EXPECT_THROW(aggregate_and_step(fresh, short_list), std::logic_error);
}

// Hand trace, M = 2, d = 2, lr = 1, k = 1, D = 2, alpha = (8, 0). One example per worker:
//   worker 0: A = I,            b = [1, 0.5]  ->  grad = [w0 - 1, w1 - 0.5]
//   worker 1: A = diag(2, 1),   b = [1, 2]    ->  grad = [4 w0 - 2, w1 - 2]
// t=0 (everyone uploads), w = [0, 0]:
//   g0 = [-1, -0.5] -> (0,-1),  e0 = [0, -0.5];   g1 = [-2, -2] -> (0,-2) (tie), e1 = [0, -2]
//   w1 = -([-1, 0] + [-2, 0]) / 2 = [1.5, 0];  history 2.25
// t=1: rhs = 8 * 2.25 / 4 = 4.5
//   worker 0: fresh [0.5, -0.5], stale [-1, -0.5], lhs 2.25 <= 4.5 -> skip, tau = 2
//   worker 1: fresh [4, -2], stale [-2, -2], lhs 36 -> upload g = [4, -4] -> (0, 4), e1 = [0, -4]
//   w2 = [1.5, 0] - ([-1, 0] + [4, 0]) / 2 = [0, 0];  history 2.25
// t=2: rhs = 4.5; worker 0 has tau = D, lhs 0 -> forced upload of g = [-1, -1] -> (0, -1), e0 = [0, -1]
TEST(Server, TwoWorkerHandTrace) {
  auto data = std::make_shared<Dataset>();
  data->features.resize(2, 4);
  data->features << 1, 0, 0, 1, 2, 0, 0, 1;
  data->targets.resize(2, 2);
  data->targets << 1, 0.5, 1, 2;
  const Task task = make_quadratic_task(2, 2);
  const ParamVector w0 = vec({0, 0});
  ServerState server = make_server(w0, 2, 2, {8.0, 0.0});
  std::vector<WorkerState> ws{make_worker(0, shard_of(data, {0}, 0), w0, 1.0),
                              make_worker(1, shard_of(data, {1}, 1), w0, 1.0)};
  const Batch only{{0}};

  auto step = [&](std::int64_t t) {
    const ParamVector now = broadcast(server);
    const double rhs = rule_rhs(server);
    std::vector<WorkerDecision> ds;
    for (auto& w : ws) ds.push_back(worker_turn(w, task, now, only, rhs, 2, t, 1));
    std::vector<WorkerDecision> flags = ds;
    aggregate_and_step(server, ds);
    return std::make_pair(rhs, flags);
  };

  auto [rhs0, d0] = step(0);
  EXPECT_EQ(rhs0, 0.0);
  EXPECT_TRUE(d0[0].communicated && d0[1].communicated);
  EXPECT_EQ(ws[0].error, vec({0, -0.5}));
  EXPECT_EQ(ws[1].error, vec({0, -2}));
  EXPECT_EQ(server.w, vec({1.5, 0}));
  EXPECT_EQ(server.diff_history.at(1), 2.25);

  auto [rhs1, d1] = step(1);
  EXPECT_EQ(rhs1, 4.5);
  EXPECT_FALSE(d1[0].communicated);
  EXPECT_EQ(d1[0].lhs, 2.25);
  EXPECT_TRUE(d1[1].communicated);
  EXPECT_EQ(d1[1].lhs, 36.0);
  EXPECT_EQ(ws[0].tau, 2);
  EXPECT_EQ(ws[1].error, vec({0, -4}));
  EXPECT_EQ(server.w, vec({0, 0}));
  EXPECT_EQ(server.stale_cache[1]->values, (std::vector<double>{4.0}));

  auto [rhs2, d2] = step(2);
  EXPECT_EQ(rhs2, 4.5);
  EXPECT_TRUE(d2[0].communicated);
  EXPECT_TRUE(d2[0].forced);
  EXPECT_EQ(d2[0].lhs, 0.0);
  EXPECT_EQ(ws[0].error, vec({0, -1}));
  EXPECT_EQ(server.stale_cache[0]->indices, (std::vector<Index>{0}));
  EXPECT_EQ(server.stale_cache[0]->values, (std::vector<double>{-1.0}));
}
