#include "sasg/server.hpp"

#include <stdexcept>
#include <string>

namespace sasg {

StepHistory::StepHistory(int capacity) : buffer_(static_cast<std::size_t>(capacity), 0.0) {
  if (capacity < 1) throw std::invalid_argument("StepHistory: capacity must be positive");
}

void StepHistory::push(double value) {
  head_ = (head_ + 1) % capacity();
  buffer_[static_cast<std::size_t>(head_)] = value;
  if (size_ < capacity()) ++size_;
}

double StepHistory::at(int d) const {
  if (d < 1 || d > size_) throw std::out_of_range("StepHistory: index " + std::to_string(d) + " not recorded");
  const int idx = ((head_ - (d - 1)) % capacity() + capacity()) % capacity();
  return buffer_[static_cast<std::size_t>(idx)];
}

ServerState make_server(ParamVector w0, int workers, int max_delay, std::vector<double> alphas) {
  if (workers < 1) throw std::invalid_argument("server: need at least one worker");
  if (max_delay < 1) throw std::invalid_argument("server: max delay D must be >= 1");
  if (static_cast<int>(alphas.size()) != max_delay) {
    throw std::invalid_argument("server: expected " + std::to_string(max_delay) + " alpha weights, got " +
                                std::to_string(alphas.size()));
  }
  for (double a : alphas) {
    if (!(a >= 0.0)) throw std::invalid_argument("server: alpha weights must be non-negative");
  }
  ServerState s;
  s.w = std::move(w0);
  s.diff_history = StepHistory(max_delay);
  s.stale_cache.resize(static_cast<std::size_t>(workers));
  s.alphas = std::move(alphas);
  s.workers = workers;
  s.max_delay = max_delay;
  return s;
}

double rule_rhs(const ServerState& state) {
  double acc = 0.0;
  for (int d = 1; d <= state.diff_history.size(); ++d) acc += state.alphas[static_cast<std::size_t>(d - 1)] * state.diff_history.at(d);
  const double m = static_cast<double>(state.workers);
  return acc / (m * m);
}

ParamVector broadcast(const ServerState& state) { return state.w; }

const ParamVector& aggregate_and_step(ServerState& state, std::span<WorkerDecision> decisions) {
  if (static_cast<int>(decisions.size()) != state.workers) {
    throw std::logic_error("aggregate_and_step: expected one decision per worker");
  }
  for (std::size_t m = 0; m < decisions.size(); ++m) {
    auto& d = decisions[m];
    if (d.communicated) {
      if (!d.payload) throw std::logic_error("aggregate_and_step: communicating worker sent no payload");
      detail::require_same_size(d.payload->dim, state.w.size(), "aggregate_and_step payload");
      state.stale_cache[m] = std::move(*d.payload);
      d.payload.reset();
    } else if (!state.stale_cache[m]) {
      throw std::logic_error("aggregate_and_step: worker " + std::to_string(m) + " skipped with no cached update");
    }
  }

  ParamVector acc = ParamVector::Zero(state.w.size());
  for (const auto& cached : state.stale_cache) accumulate(*cached, acc);
  const double m = static_cast<double>(state.workers);
  ParamVector next(state.w.size());
  for (Index i = 0; i < next.size(); ++i) next[i] = state.w[i] - acc[i] / m;

  state.diff_history.push(sq_distance(next, state.w));
  state.w = std::move(next);
  return state.w;
}

}  // namespace sasg
