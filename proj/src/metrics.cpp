#include "sasg/metrics.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace sasg {

int index_bits(Index d) {
  if (d < 1) throw std::invalid_argument("index_bits: dimension must be positive");
  return static_cast<int>(std::bit_width(static_cast<std::uint64_t>(d - 1)));
}

CommCount account_iteration(std::span<const WorkerDecision> decisions, Index k, Index d, int workers) {
  if (static_cast<int>(decisions.size()) > workers) throw std::invalid_argument("account_iteration: too many decisions");
  CommCount c;
  for (const auto& dec : decisions) {
    if (dec.communicated) ++c.rounds;
  }
  c.bits_paper = c.rounds * 32LL * k;
  c.bits_realistic = c.rounds * k * (32LL + index_bits(d));
  return c;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }
}  // namespace

std::string csv_header() { return "t,loss,acc,rounds,cum_rounds,bits_paper,bits_real,grad_norm_sq,nu_residual,lyapunov"; }

std::string csv_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.t);
  row += ',' + fmt_double(r.loss);
  row += ',' + fmt_opt(r.test_accuracy);
  row += ',' + std::to_string(r.rounds_this_iter);
  row += ',' + std::to_string(r.cum_rounds);
  row += ',' + std::to_string(r.cum_bits_paper);
  row += ',' + std::to_string(r.cum_bits_realistic);
  row += ',' + fmt_opt(r.grad_norm_sq);
  row += ',' + fmt_opt(r.nu_residual);
  row += ',' + fmt_opt(r.lyapunov);
  return row;
}

void write_csv(const std::string& path, std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write CSV '" + path + "'");
  out << csv_header() << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
  if (!out) throw std::runtime_error("I/O error while writing '" + path + "'");
}

nlohmann::json make_summary(std::span<const MetricsRecord> records, const nlohmann::json& config_echo,
                            const DiagnosticTotals& diag, long long downlink_bits,
                            std::optional<double> final_accuracy) {
  nlohmann::json s;
  s["config"] = config_echo;
  const MetricsRecord last = records.empty() ? MetricsRecord{} : records.back();
  s["totals"] = {{"iterations", records.size()},
                 {"rounds", last.cum_rounds},
                 {"bits_paper", last.cum_bits_paper},
                 {"bits_realistic", last.cum_bits_realistic},
                 {"downlink_bits", downlink_bits}};
  // Same layout as a "# Rounds / # Bits" comparison row.
  s["table"] = {{"# Rounds", last.cum_rounds}, {"# Bits", last.cum_bits_paper}};
  nlohmann::json fin;
  fin["loss"] = records.empty() ? nlohmann::json(nullptr) : nlohmann::json(last.loss);
  fin["test_accuracy"] = final_accuracy ? nlohmann::json(*final_accuracy) : nlohmann::json(nullptr);
  std::optional<double> last_grad;
  for (const auto& r : records) {
    if (r.grad_norm_sq) last_grad = r.grad_norm_sq;
  }
  fin["grad_norm_sq"] = last_grad ? nlohmann::json(*last_grad) : nlohmann::json(nullptr);
  s["final"] = fin;

  nlohmann::json checkpoints = nlohmann::json::array();
  for (const auto& r : records) {
    if (!r.test_accuracy) continue;
    checkpoints.push_back({{"t", r.t},
                           {"acc", *r.test_accuracy},
                           {"loss", r.loss},
                           {"cum_rounds", r.cum_rounds},
                           {"cum_bits_paper", r.cum_bits_paper},
                           {"cum_bits_realistic", r.cum_bits_realistic}});
  }
  s["checkpoints"] = checkpoints;
  s["diagnostics"] = {{"max_nu_residual", diag.max_nu_residual},
                      {"max_nu_residual_corrected", diag.max_nu_residual_corrected},
                      {"nu_checks", diag.nu_checks},
                      {"nu_violations", diag.nu_violations},
                      {"nu_violations_corrected", diag.nu_violations_corrected},
                      {"error_bound_checks", diag.error_bound_checks},
                      {"error_bound_violations", diag.error_bound_violations},
                      {"lyapunov_nonpositive", diag.lyapunov_nonpositive}};
  return s;
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write JSON '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("I/O error while writing '" + path + "'");
}

ParamVector auxiliary_point(const ParamVector& w, std::span<const ParamVector> errors) {
  ParamVector sum = ParamVector::Zero(w.size());
  for (const auto& e : errors) {
    detail::require_same_size(e.size(), w.size(), "auxiliary_point");
    for (Index i = 0; i < sum.size(); ++i) sum[i] += e[i];
  }
  const double m = static_cast<double>(errors.size());
  ParamVector nu(w.size());
  for (Index i = 0; i < nu.size(); ++i) nu[i] = w[i] - sum[i] / m;
  return nu;
}

AuxTracker make_aux_tracker(const ParamVector& w, std::span<const ParamVector> errors) {
  return {auxiliary_point(w, errors), std::vector<ParamVector>(errors.begin(), errors.end())};
}

double nu_recursion_residual(const ParamVector& nu_prev, const ParamVector& nu_next,
                             std::span<const ParamVector> fresh_grads,
                             std::span<const std::optional<ParamVector>> skipped_deltas, double gamma, int workers,
                             std::span<const std::optional<ParamVector>> skipped_drifts) {
  const Index d = nu_prev.size();
  if (static_cast<int>(fresh_grads.size()) != workers || static_cast<int>(skipped_deltas.size()) != workers) {
    throw std::invalid_argument("nu_recursion_residual: need one gradient and one delta slot per worker");
  }
  Vector<double> grad_sum = Vector<double>::Zero(d);
  Vector<double> delta_sum = Vector<double>::Zero(d);
  Vector<double> drift_sum = Vector<double>::Zero(d);
  for (int m = 0; m < workers; ++m) {
    grad_sum += fresh_grads[static_cast<std::size_t>(m)];
    if (skipped_deltas[static_cast<std::size_t>(m)]) delta_sum += *skipped_deltas[static_cast<std::size_t>(m)];
    if (!skipped_drifts.empty() && skipped_drifts[static_cast<std::size_t>(m)]) {
      drift_sum += *skipped_drifts[static_cast<std::size_t>(m)];
    }
  }
  const double mm = static_cast<double>(workers);
  const Vector<double> rhs = (-gamma / mm) * grad_sum + (gamma / mm) * delta_sum + drift_sum / mm;
  return std::sqrt(sq_norm((nu_next - nu_prev) - rhs));
}

double check_nu_recursion(AuxTracker& tracker, const ParamVector& w_new, const ParamVector& w_old,
                          std::span<const ParamVector> new_errors, std::span<const ParamVector> fresh_grads,
                          std::span<const std::optional<ParamVector>> skipped_deltas, double gamma, int workers) {
  detail::require_same_size(w_new.size(), w_old.size(), "check_nu_recursion");
  ParamVector next = auxiliary_point(w_new, new_errors);
  const double r = nu_recursion_residual(tracker.nu, next, fresh_grads, skipped_deltas, gamma, workers);
  tracker.nu = std::move(next);
  tracker.errors.assign(new_errors.begin(), new_errors.end());
  return r;
}

double nu_tolerance(const ParamVector& nu) { return 1e-9 * (1.0 + std::sqrt(sq_norm(nu))); }

double error_bound(double gamma, Index k, Index d, double b_hat) {
  const double delta = compressor_delta(k, d);
  return 4.0 * (1.0 - delta) / (delta * delta) * gamma * gamma * b_hat * b_hat;
}

std::vector<bool> check_error_bound(std::span<const WorkerState> workers, double gamma, Index k, Index d,
                               std::span<const double> b_hat) {
  if (workers.size() != b_hat.size()) throw std::invalid_argument("check_error_bound: one B-hat per worker");
  std::vector<bool> ok(workers.size());
  for (std::size_t m = 0; m < workers.size(); ++m) {
    ok[m] = sq_norm(workers[m].error) <= error_bound(gamma, k, d, b_hat[m]);
  }
  return ok;
}

namespace {
double sum_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}
}  // namespace

double lyapunov_beta1_closed_form(std::span<const double> alphas, int workers, double smoothness, double gamma_bar) {
  const double m2 = static_cast<double>(workers) * static_cast<double>(workers);
  const double l = smoothness;
  const double g2 = gamma_bar * gamma_bar;
  const double sum_alpha = sum_of(alphas);
  const double denom = 1.0 - 8.0 * g2 / m2 * sum_alpha;
  if (!(denom > 0.0)) {
    throw std::invalid_argument("Lyapunov weights infeasible: 1 - 8 gamma^2 sum(alpha) / M^2 = " + std::to_string(denom));
  }
  const double numer = (2.0 * g2 * (l + 1.0) / m2 + 1.0 / (2.0 * m2 * l)) * sum_alpha +
                       l * static_cast<double>(alphas.size()) / 2.0;
  return numer / denom;
}

std::vector<double> lyapunov_betas(std::span<const double> alphas, int workers, double smoothness, double gamma_bar) {
  if (alphas.empty()) throw std::invalid_argument("lyapunov_betas: need at least one alpha");
  if (!(smoothness > 0.0)) throw std::invalid_argument("lyapunov_betas: smoothness must be positive");
  const double beta1 = lyapunov_beta1_closed_form(alphas, workers, smoothness, gamma_bar);
  const double m2 = static_cast<double>(workers) * static_cast<double>(workers);
  const double l = smoothness;
  auto increment = [&](double alpha) {
    return alpha / (2.0 * m2 * l) + l / 2.0 + 2.0 * gamma_bar * gamma_bar * alpha * (l + 1.0 + 4.0 * beta1) / m2;
  };
  const std::size_t depth = alphas.size();
  std::vector<double> betas(depth);
  betas[depth - 1] = increment(alphas[depth - 1]);
  for (std::size_t d = depth - 1; d-- > 0;) betas[d] = betas[d + 1] + increment(alphas[d]);
  return betas;
}

double lyapunov_value(double f_nu, double f_star, const StepHistory& history, std::span<const double> betas) {
  double v = f_nu - f_star;
  for (int d = 1; d <= history.size() && d <= static_cast<int>(betas.size()); ++d) {
    v += betas[static_cast<std::size_t>(d - 1)] * history.at(d);
  }
  return v;
}

}  // namespace sasg
