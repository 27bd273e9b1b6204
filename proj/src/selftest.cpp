#include <cmath>
#include <cstdio>
#include <random>

#include "sasg/rng.hpp"
#include "sasg/simulator.hpp"
#include "sasg/sparsify.hpp"

namespace sasg {

namespace {

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

CheckResult compressor_contraction() {
  auto rng = keyed_rng({7, 0xc0ffee});
  std::normal_distribution<double> normal(0.0, 1.0);
  long long bad = 0;
  double worst_dot = 0.0;
  int cases = 0;
  for (Index d : {10, 100, 1000}) {
    for (Index k : {Index{1}, d / 10, d / 2, d}) {
      for (int rep = 0; rep < 200; ++rep, ++cases) {
        ParamVector x(d);
        for (Index i = 0; i < d; ++i) x[i] = normal(rng);
        const ParamVector kept = densify(top_k(x, k));
        const ParamVector rest = x - kept;
        const double lhs = sq_norm(rest);
        if (lhs > (1.0 - static_cast<double>(k) / static_cast<double>(d)) * sq_norm(x)) ++bad;
        worst_dot = std::max(worst_dot, std::abs(dot(rest, kept)) / std::max(1.0, sq_norm(x)));
      }
    }
  }
  return {"top-k contraction and orthogonality", bad == 0 && worst_dot <= 1e-12,
          std::to_string(cases) + " vectors, " + std::to_string(bad) + " violations, max |<r,kept>| " +
              fmt("%.2e", worst_dot)};
}

ExperimentConfig small_quadratic(Mode mode, double k_fraction) {
  ExperimentConfig cfg;
  cfg.task.kind = TaskKind::quadratic;
  cfg.task.dataset = "gaussian";
  cfg.task.dim = 20;
  cfg.task.examples = 400;
  cfg.task.noise = 0.1;
  cfg.workers = 4;
  cfg.batch = 5;
  cfg.iterations = 200;
  cfg.gamma = 0.02;
  cfg.max_delay = 5;
  cfg.alpha = "1/(2gamma)";
  cfg.k_fraction = k_fraction;
  cfg.grad_norm_every = 0;
  cfg.nu_check = NuCheck::report;
  apply_mode(cfg, mode);
  return cfg;
}

}  // namespace

std::vector<CheckResult> selftest() {
  std::vector<CheckResult> out;
  out.push_back(compressor_contraction());

  {
    const ExperimentConfig cfg = small_quadratic(Mode::lasg, 1.0);
    const Problem p = build_problem(cfg.task);
    const SeedResult r = run_seed(cfg, p, 1);
    out.push_back({"auxiliary recursion, uncompressed", r.diag.nu_violations == 0,
                   fmt("max residual %.2e over %.0f steps", r.diag.max_nu_residual, static_cast<double>(r.diag.nu_checks))});
  }
  {
    const ExperimentConfig cfg = small_quadratic(Mode::sasg, 0.25);
    const Problem p = build_problem(cfg.task);
    const SeedResult r = run_seed(cfg, p, 1);
    out.push_back({"auxiliary recursion with staleness drift, k = d/4", r.diag.nu_violations_corrected == 0,
                   fmt("max residual %.2e", r.diag.max_nu_residual_corrected)});
    out.push_back({"error memory bound, k = d/4", r.diag.error_bound_violations == 0,
                   std::to_string(r.diag.error_bound_checks) + " checks, " + std::to_string(r.diag.error_bound_violations) +
                       " violations"});
  }
  {
    ExperimentConfig a = small_quadratic(Mode::sgd, 1.0);
    ExperimentConfig b = small_quadratic(Mode::sasg, 1.0);
    b.alpha = "0";
    a.nu_check = b.nu_check = NuCheck::off;
    const Problem p = build_problem(a.task);
    const SeedResult ra = run_seed(a, p, 3);
    const SeedResult rb = run_seed(b, p, 3);
    const bool same = ra.final_w.size() == rb.final_w.size() &&
                      std::equal(ra.final_w.begin(), ra.final_w.end(), rb.final_w.begin());
    out.push_back({"zero-threshold uncompressed run matches plain SGD", same, same ? "bitwise equal" : "differs"});
  }
  {
    const std::vector<double> alphas(10, 2.0);
    const double gamma = 0.01;
    const auto betas = lyapunov_betas(alphas, 4, 3.0, gamma);
    const double closed = lyapunov_beta1_closed_form(alphas, 4, 3.0, gamma);
    const double rel = std::abs(betas.front() - closed) / closed;
    out.push_back({"Lyapunov weights: back-substitution reproduces beta_1", rel <= 1e-12,
                   fmt("beta_1 %.6g, relative gap %.1e", closed, rel)});
  }
  return out;
}

}  // namespace sasg
