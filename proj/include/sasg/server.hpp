#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sasg/sparsify.hpp"
#include "sasg/worker.hpp"

namespace sasg {

/// Fixed-capacity history of squared parameter steps; at(1) is the newest.
class StepHistory {
 public:
  explicit StepHistory(int capacity = 1);

  void push(double value);
  /// d in [1, size()].
  double at(int d) const;
  int size() const { return size_; }
  int capacity() const { return static_cast<int>(buffer_.size()); }

 private:
  std::vector<double> buffer_;
  int head_ = 0;
  int size_ = 0;
};

struct ServerState {
  ParamVector w;
  StepHistory diff_history;
  std::vector<std::optional<SparseUpdate<double>>> stale_cache;
  std::vector<double> alphas;  // alpha_1 .. alpha_D
  int workers = 1;
  int max_delay = 1;
};

/// alphas.size() must equal max_delay and every alpha must be >= 0.
ServerState make_server(ParamVector w0, int workers, int max_delay, std::vector<double> alphas);

/// (1/M^2) * sum_{d=1}^{min(t,D)} alpha_d * ||w^{t+1-d} - w^{t-d}||^2.
double rule_rhs(const ServerState& state);

/// Copy of the current parameters. Pure read.
ParamVector broadcast(const ServerState& state);

/// Bits pushed down to each worker per broadcast (32-bit words).
inline long long downlink_bits(Index dim) { return 32LL * dim; }

/// Moves fresh payloads into the cache (the decisions keep only their flags),
/// then applies
/// w <- w - (1/M) * sum_m cache[m] in ascending worker order, and records
/// ||w_new - w_old||^2. Throws std::logic_error if a skipping worker has no
/// cached update.
const ParamVector& aggregate_and_step(ServerState& state, std::span<WorkerDecision> decisions);

}  // namespace sasg
