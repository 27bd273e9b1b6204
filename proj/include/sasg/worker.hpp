#pragma once

#include <cstdint>
#include <optional>

#include "sasg/sparsify.hpp"
#include "sasg/tasks.hpp"

namespace sasg {

/// Which quantity the worker compares against the server threshold.
///   sasg: ||grad(w_now; xi_t) - grad(snapshot; xi_t)||^2, both on the current batch.
///   lag:  ||grad(w_now; xi_t) - grad(snapshot; xi_{t-tau})||^2, i.e. against the
///         gradient that went into the last upload.
enum class SelectionRule { sasg, lag };

struct WorkerState {
  int id = 0;
  ParamVector error;     // error-feedback memory e_m
  ParamVector snapshot;  // parameters at the last upload
  int tau = 1;           // iterations since the last upload, in [1, D]
  DataShard shard;
  double lr = 0.0;

  // Filled by rule_lhs and consumed by make_payload in the same iteration.
  ParamVector fresh_grad;
  double fresh_loss = 0.0;

  // Running max of ||fresh_grad|| (the B-hat of the residual bound).
  double max_grad_norm = 0.0;

  // Only maintained when track_history is set (LAG rule, recursion diagnostics):
  // the fresh gradient and the incoming error of the most recent upload.
  bool track_history = false;
  bool has_uploaded = false;
  ParamVector upload_grad;
  ParamVector upload_error;
};

WorkerState make_worker(int id, DataShard shard, const ParamVector& w0, double lr, bool track_history = false);

struct WorkerDecision {
  bool communicated = false;
  std::optional<SparseUpdate<double>> payload;
  double lhs = 0.0;
  bool forced = false;
};

/// Evaluates the selection rule's left side at w_now on `batch`, caching the
/// fresh gradient and loss in `state`. Two gradient evaluations under the
/// SASG rule, one under LAG.
double rule_lhs(WorkerState& state, const Task& task, const ParamVector& w_now, const Batch& batch,
                SelectionRule rule = SelectionRule::sasg);

/// Communicate iff lhs > rhs, or tau >= max_delay, or t == 0 (every worker
/// uploads once to seed the snapshot and the server cache). `forced` marks
/// uploads triggered only by the staleness cap.
WorkerDecision decide(const WorkerState& state, double lhs, double rhs, int max_delay, std::int64_t t);

/// g = lr * fresh_grad + error; returns T_k(g), leaves error = g - T_k(g),
/// resets tau to 1 and moves the snapshot to w_now.
SparseUpdate<double> make_payload(WorkerState& state, const ParamVector& fresh_grad, Index k, const ParamVector& w_now);

/// Error and snapshot untouched, tau + 1. Throws std::logic_error if that
/// would exceed max_delay.
void skip(WorkerState& state, int max_delay);

/// One full worker turn: rule_lhs, decide, then make_payload or skip.
WorkerDecision worker_turn(WorkerState& state, const Task& task, const ParamVector& w_now, const Batch& batch,
                           double rhs, int max_delay, std::int64_t t, Index k,
                           SelectionRule rule = SelectionRule::sasg);

}  // namespace sasg
