#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasg/server.hpp"
#include "sasg/worker.hpp"

namespace sasg {

// ---------------------------------------------------------------------------
// Communication accounting
// ---------------------------------------------------------------------------

struct CommCount {
  long long rounds = 0;
  long long bits_paper = 0;      // 32 bits per transmitted value
  long long bits_realistic = 0;  // value plus a ceil(log2 d)-bit index per entry

  bool operator==(const CommCount&) const = default;
};

/// ceil(log2 d); 0 for d = 1.
int index_bits(Index d);

CommCount account_iteration(std::span<const WorkerDecision> decisions, Index k, Index d, int workers);

// ---------------------------------------------------------------------------
// Per-iteration record and file output
// ---------------------------------------------------------------------------

struct MetricsRecord {
  std::int64_t t = 0;
  double loss = 0.0;                    // mean worker batch loss at w^t
  std::optional<double> test_accuracy;  // measured on w^{t+1}
  int rounds_this_iter = 0;
  long long cum_rounds = 0;
  long long cum_bits_paper = 0;
  long long cum_bits_realistic = 0;
  std::optional<double> grad_norm_sq;  // ||grad F(w^t)||^2
  std::optional<double> nu_residual;
  std::optional<double> lyapunov;
};

/// t,loss,acc,rounds,cum_rounds,bits_paper,bits_real,grad_norm_sq,nu_residual,lyapunov
std::string csv_header();
std::string csv_row(const MetricsRecord& r);
void write_csv(const std::string& path, std::span<const MetricsRecord> records);

struct DiagnosticTotals {
  double max_nu_residual = 0.0;            // against the published recursion
  double max_nu_residual_corrected = 0.0;  // with the staleness correction term
  long long nu_checks = 0;
  long long nu_violations = 0;
  long long nu_violations_corrected = 0;
  long long error_bound_checks = 0;
  long long error_bound_violations = 0;
  long long lyapunov_nonpositive = 0;
};

/// JSON summary: config echo, final metrics, totals, accuracy checkpoints and
/// diagnostics. Totals are taken from the last record (zero for an empty run).
nlohmann::json make_summary(std::span<const MetricsRecord> records, const nlohmann::json& config_echo,
                            const DiagnosticTotals& diag, long long downlink_bits,
                            std::optional<double> final_accuracy);
void write_json(const std::string& path, const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Auxiliary sequence nu^t = w^t - (1/M) sum_m e_m^t
// ---------------------------------------------------------------------------

ParamVector auxiliary_point(const ParamVector& w, std::span<const ParamVector> errors);

struct AuxTracker {
  ParamVector nu;
  std::vector<ParamVector> errors;
};

AuxTracker make_aux_tracker(const ParamVector& w, std::span<const ParamVector> errors);

/// || (nu_next - nu_prev) - rhs || with
///   rhs = -(gamma/M) sum_all fresh_m + (gamma/M) sum_skipped delta_m
///         [+ (1/M) sum_skipped drift_m when drifts are supplied].
/// deltas[m] / drifts[m] are set exactly for the workers that skipped.
double nu_recursion_residual(const ParamVector& nu_prev, const ParamVector& nu_next,
                             std::span<const ParamVector> fresh_grads,
                             std::span<const std::optional<ParamVector>> skipped_deltas, double gamma, int workers,
                             std::span<const std::optional<ParamVector>> skipped_drifts = {});

/// Advances the tracker to (w_new, new_errors) and returns the residual of the
/// published recursion. Delta for a skipper is its fresh gradient minus the
/// gradient inside its last upload.
double check_nu_recursion(AuxTracker& tracker, const ParamVector& w_new, const ParamVector& w_old,
                          std::span<const ParamVector> new_errors, std::span<const ParamVector> fresh_grads,
                          std::span<const std::optional<ParamVector>> skipped_deltas, double gamma, int workers);

/// 1e-9 * (1 + ||nu||).
double nu_tolerance(const ParamVector& nu);

// ---------------------------------------------------------------------------
// Residual bound on the error memory
// ---------------------------------------------------------------------------

/// 4 (1 - delta) / delta^2 * gamma^2 * b_hat^2 with delta = k/d.
double error_bound(double gamma, Index k, Index d, double b_hat);

/// One flag per worker: ||e_m||^2 <= error_bound(gamma, k, d, b_hat[m]).
std::vector<bool> check_error_bound(std::span<const WorkerState> workers, double gamma, Index k, Index d,
                               std::span<const double> b_hat);

// ---------------------------------------------------------------------------
// Lyapunov tracker
// ---------------------------------------------------------------------------

/// Weights beta_1..beta_D that zero every c_d coefficient of the descent
/// inequality for step size gamma_bar. Throws std::invalid_argument when
/// 1 - 8 gamma_bar^2 sum(alpha) / M^2 <= 0.
std::vector<double> lyapunov_betas(std::span<const double> alphas, int workers, double smoothness, double gamma_bar);

/// Closed-form beta_1 of the same system, for cross-checking the back-substitution.
double lyapunov_beta1_closed_form(std::span<const double> alphas, int workers, double smoothness, double gamma_bar);

/// F(nu) - F* + sum_d beta_d * history.at(d).
double lyapunov_value(double f_nu, double f_star, const StepHistory& history, std::span<const double> betas);

}  // namespace sasg
