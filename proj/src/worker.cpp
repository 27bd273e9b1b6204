#include "sasg/worker.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sasg {

WorkerState make_worker(int id, DataShard shard, const ParamVector& w0, double lr, bool track_history) {
  WorkerState s;
  s.id = id;
  s.error = ParamVector::Zero(w0.size());
  s.snapshot = w0;
  s.tau = 1;
  s.shard = std::move(shard);
  s.lr = lr;
  s.track_history = track_history;
  return s;
}

double rule_lhs(WorkerState& state, const Task& task, const ParamVector& w_now, const Batch& batch,
                SelectionRule rule) {
  detail::require_same_size(w_now.size(), state.snapshot.size(), "rule_lhs");
  LossGradient fresh = loss_and_gradient(task, w_now, batch, state.shard);
  state.fresh_loss = fresh.loss;
  state.fresh_grad = std::move(fresh.gradient);
  state.max_grad_norm = std::max(state.max_grad_norm, std::sqrt(sq_norm(state.fresh_grad)));

  if (rule == SelectionRule::lag) {
    if (!state.track_history) throw std::logic_error("LAG rule requires upload history tracking");
    return state.has_uploaded ? sq_distance(state.fresh_grad, state.upload_grad) : 0.0;
  }
  const ParamVector stale = gradient(task, state.snapshot, batch, state.shard);
  return sq_distance(state.fresh_grad, stale);
}

WorkerDecision decide(const WorkerState& state, double lhs, double rhs, int max_delay, std::int64_t t) {
  if (!(rhs >= 0.0)) throw std::invalid_argument("decide: threshold must be non-negative");
  WorkerDecision d;
  d.lhs = lhs;
  const bool violates = lhs > rhs;
  const bool stale = state.tau >= max_delay;
  d.communicated = t == 0 || violates || stale;
  d.forced = stale && !violates && t != 0;
  return d;
}

SparseUpdate<double> make_payload(WorkerState& state, const ParamVector& fresh_grad, Index k, const ParamVector& w_now) {
  ParamVector g = axpy(state.lr, fresh_grad, state.error);
  SparseUpdate<double> payload = top_k(g, k);
  if (state.track_history) {
    state.upload_grad = fresh_grad;
    state.upload_error = state.error;
  }
  // g - densify(T_k(g)): kept coordinates become exactly zero.
  for (Index i : payload.indices) g[i] = 0.0;
  state.error = std::move(g);
  state.tau = 1;
  state.snapshot = w_now;
  state.has_uploaded = true;
  return payload;
}

void skip(WorkerState& state, int max_delay) {
  if (state.tau + 1 > max_delay) {
    throw std::logic_error("worker " + std::to_string(state.id) + " skipped with tau=" + std::to_string(state.tau) +
                           " at max delay " + std::to_string(max_delay));
  }
  ++state.tau;
}

WorkerDecision worker_turn(WorkerState& state, const Task& task, const ParamVector& w_now, const Batch& batch,
                           double rhs, int max_delay, std::int64_t t, Index k, SelectionRule rule) {
  const double lhs = rule_lhs(state, task, w_now, batch, rule);
  WorkerDecision d = decide(state, lhs, rhs, max_delay, t);
  if (d.communicated) {
    d.payload = make_payload(state, state.fresh_grad, k, w_now);
  } else {
    skip(state, max_delay);
  }
  return d;
}

}  // namespace sasg
