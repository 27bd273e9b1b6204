#include "sasg/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sasg/server.hpp"
#include "sasg/sparsify.hpp"
#include "sasg/worker.hpp"

namespace sasg {

namespace {

std::shared_ptr<Dataset> take_rows(const Dataset& src, Index begin, Index count) {
  auto out = std::make_shared<Dataset>();
  out->features = src.features.middleRows(begin, count);
  if (src.targets.rows() > 0) out->targets = src.targets.middleRows(begin, count);
  if (!src.labels.empty()) {
    out->labels.assign(src.labels.begin() + begin, src.labels.begin() + begin + count);
  }
  return out;
}

std::string mnist_dir(const TaskConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("SASG_DATA_DIR")) return env;
  throw std::runtime_error("MNIST task needs task.data_dir or SASG_DATA_DIR");
}

}  // namespace

Problem build_problem(const TaskConfig& cfg) {
  Problem p;
  switch (cfg.kind) {
    case TaskKind::quadratic: {
      QuadraticProblem q = cfg.dataset == "identity" ? make_identity_quadratic(cfg.dim, cfg.examples)
                                                     : make_quadratic_problem(cfg.examples, cfg.dim, cfg.rows,
                                                                              cfg.noise, cfg.data_seed);
      p.task = q.task;
      p.train = q.data;
      p.smoothness = quadratic_smoothness(p.task, *p.train);
      const DataShard all{0, p.train, [&] {
                            std::vector<Index> rows(static_cast<std::size_t>(p.train->size()));
                            std::iota(rows.begin(), rows.end(), Index{0});
                            return rows;
                          }(),
                          0};
      p.f_star = full_loss(p.task, quadratic_minimizer(p.task, *p.train), std::span<const DataShard>(&all, 1));
      break;
    }
    case TaskKind::logistic: {
      auto data = make_blobs(cfg.examples + cfg.test_examples, cfg.dim, 2, cfg.separation, cfg.data_seed);
      p.task = make_logistic_task(cfg.dim, cfg.l2);
      p.train = take_rows(*data, 0, cfg.examples);
      if (cfg.test_examples > 0) p.test = take_rows(*data, cfg.examples, cfg.test_examples);
      break;
    }
    case TaskKind::fc_net: {
      p.task = make_fc_task(cfg.layers);
      if (cfg.dataset == "mnist") {
        const std::string dir = mnist_dir(cfg);
        auto train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
        auto test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
        if (train->features.cols() != cfg.layers.front()) {
          throw std::invalid_argument("MNIST images have " + std::to_string(train->features.cols()) +
                                      " pixels but the first layer has " + std::to_string(cfg.layers.front()));
        }
        const Index n_train = cfg.examples > 0 ? std::min(cfg.examples, train->size()) : train->size();
        const Index n_test = cfg.test_examples > 0 ? std::min(cfg.test_examples, test->size()) : test->size();
        p.train = n_train == train->size() ? train : take_rows(*train, 0, n_train);
        p.test = n_test == test->size() ? test : take_rows(*test, 0, n_test);
      } else {
        auto data = make_blobs(cfg.examples + cfg.test_examples, cfg.layers.front(),
                               static_cast<int>(cfg.layers.back()), cfg.separation, cfg.data_seed);
        p.train = take_rows(*data, 0, cfg.examples);
        if (cfg.test_examples > 0) p.test = take_rows(*data, cfg.examples, cfg.test_examples);
      }
      break;
    }
  }
  return p;
}

Index total_iterations(const ExperimentConfig& cfg, const Problem& problem) {
  if (cfg.iterations > 0) return cfg.iterations;
  const Index largest = (problem.train->size() + cfg.workers - 1) / cfg.workers;
  return static_cast<Index>(cfg.epochs) * iterations_per_epoch(largest, cfg.batch);
}

namespace {

double lr_at(const ExperimentConfig& cfg, std::int64_t t, Index per_epoch) {
  double lr = cfg.gamma;
  const std::int64_t epoch = t / per_epoch;
  for (const auto& d : cfg.lr_decay) {
    if (epoch >= d.epoch) lr *= d.factor;
  }
  return lr;
}

nlohmann::json vec_json(const ParamVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void write_state_dump(const std::string& dir, std::int64_t t, const std::string& reason, const ServerState& server,
                      const std::vector<WorkerState>& workers) {
  if (dir.empty()) return;
  nlohmann::json dump;
  dump["t"] = t;
  dump["reason"] = reason;
  dump["w"] = vec_json(server.w);
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& w : workers) {
    ws.push_back({{"id", w.id},
                  {"tau", w.tau},
                  {"lr", w.lr},
                  {"fresh_loss", w.fresh_loss},
                  {"max_grad_norm", w.max_grad_norm},
                  {"error", vec_json(w.error)},
                  {"snapshot", vec_json(w.snapshot)}});
  }
  dump["workers"] = ws;
  std::filesystem::create_directories(dir);
  write_json(dir + "/state_dump.json", dump);
}

template <typename Fn>
void for_each_worker(int workers, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, workers));
  if (threads == 1) {
    for (int m = 0; m < workers; ++m) fn(m);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) {
      pool.emplace_back([&, i] {
        try {
          for (int m = i; m < workers; m += threads) fn(m);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, const Problem& problem, std::uint64_t seed,
                    const StepObserver& observer, const std::string& dump_dir) {
  validate(cfg);
  const Task& task = problem.task;
  const int M = cfg.workers;
  const Index d = task.dim;
  const Index k = k_from_fraction(cfg.k_fraction, d);
  const std::vector<double> alphas = resolve_alphas(cfg.alpha, cfg.gamma, cfg.max_delay);
  const Index T = total_iterations(cfg, problem);
  const bool track = cfg.rule == SelectionRule::lag || cfg.nu_check != NuCheck::off;

  std::vector<double> betas;
  double f_star = 0.0;
  if (cfg.lyapunov) {
    const auto l = cfg.smoothness ? cfg.smoothness : problem.smoothness;
    const auto fs = cfg.f_star ? cfg.f_star : problem.f_star;
    if (!l || !fs) throw std::invalid_argument("config: Lyapunov tracking needs diagnostics.smoothness and f_star");
    betas = lyapunov_betas(alphas, M, *l, cfg.gamma);
    f_star = *fs;
  }

  const std::vector<DataShard> shards = shard_iid(problem.train, M, seed);
  Index largest = 0;
  for (const auto& s : shards) largest = std::max(largest, s.size());
  const Index per_epoch = iterations_per_epoch(largest, cfg.batch);

  const ParamVector w0 = init_params(task, seed);
  ServerState server = make_server(w0, M, cfg.max_delay, alphas);
  std::vector<WorkerState> workers;
  for (int m = 0; m < M; ++m) workers.push_back(make_worker(m, shards[static_cast<std::size_t>(m)], w0, cfg.gamma, track));

  AuxTracker aux = make_aux_tracker(w0, std::vector<ParamVector>(static_cast<std::size_t>(M), ParamVector::Zero(d)));

  SeedResult out;
  out.seed = seed;
  CommCount cum;
  double lr_max = cfg.gamma;
  std::vector<WorkerDecision> decisions(static_cast<std::size_t>(M));
  std::vector<double> error_sq(static_cast<std::size_t>(M), 0.0);

  for (std::int64_t t = 0; t < T; ++t) {
    const double lr = lr_at(cfg, t, per_epoch);
    lr_max = std::max(lr_max, lr);
    for (auto& w : workers) w.lr = lr;

    MetricsRecord rec;
    rec.t = t;
    if (cfg.grad_norm_every > 0 && (t % cfg.grad_norm_every == 0 || t == T - 1)) {
      rec.grad_norm_sq = sq_norm(full_gradient(task, server.w, shards));
    }
    if (cfg.lyapunov) {
      std::vector<ParamVector> errors;
      for (const auto& w : workers) errors.push_back(w.error);
      const ParamVector nu = auxiliary_point(server.w, errors);
      rec.lyapunov = lyapunov_value(full_loss(task, nu, shards), f_star, server.diff_history, betas);
    }

    const ParamVector w_now = broadcast(server);
    const double rhs = rule_rhs(server);
    try {
      for_each_worker(M, cfg.threads, [&](int m) {
        auto& state = workers[static_cast<std::size_t>(m)];
        const Batch batch = sample_batch(state.shard, t, cfg.batch, cfg.sampling);
        decisions[static_cast<std::size_t>(m)] = worker_turn(state, task, w_now, batch, rhs, cfg.max_delay, t, k, cfg.rule);
      });
    } catch (const std::exception& e) {
      write_state_dump(dump_dir, t, e.what(), server, workers);
      throw std::runtime_error("seed " + std::to_string(seed) + ", iteration " + std::to_string(t) + ": " + e.what());
    }

    double batch_loss = 0.0;
    for (const auto& w : workers) batch_loss += w.fresh_loss;
    rec.loss = batch_loss / static_cast<double>(M);

    const CommCount step = account_iteration(decisions, k, d, M);
    cum.rounds += step.rounds;
    cum.bits_paper += step.bits_paper;
    cum.bits_realistic += step.bits_realistic;
    rec.rounds_this_iter = static_cast<int>(step.rounds);
    rec.cum_rounds = cum.rounds;
    rec.cum_bits_paper = cum.bits_paper;
    rec.cum_bits_realistic = cum.bits_realistic;
    out.downlink_bits += M * downlink_bits(d);

    if (cfg.error_bound) {
      // ||e_m||^2 only changes on upload; the bound can only grow.
      for (int m = 0; m < M; ++m) {
        const auto& w = workers[static_cast<std::size_t>(m)];
        auto& cached = error_sq[static_cast<std::size_t>(m)];
        if (decisions[static_cast<std::size_t>(m)].communicated) cached = sq_norm(w.error);
        ++out.diag.error_bound_checks;
        if (cached > error_bound(lr_max, k, d, w.max_grad_norm)) ++out.diag.error_bound_violations;
      }
    }

    // Skipper terms must be read before the step; the worker state does not
    // change again until the next turn, so they are built here.
    std::vector<ParamVector> fresh;
    std::vector<std::optional<ParamVector>> deltas, drifts;
    if (cfg.nu_check != NuCheck::off) {
      for (int m = 0; m < M; ++m) {
        const auto& w = workers[static_cast<std::size_t>(m)];
        fresh.push_back(w.fresh_grad);
        if (decisions[static_cast<std::size_t>(m)].communicated) {
          deltas.emplace_back();
          drifts.emplace_back();
        } else {
          deltas.emplace_back(w.fresh_grad - w.upload_grad);
          drifts.emplace_back(w.error - w.upload_error);
        }
      }
    }

    const ParamVector w_old = server.w;
    aggregate_and_step(server, decisions);

    if (cfg.nu_check != NuCheck::off) {
      std::vector<ParamVector> errors;
      for (const auto& w : workers) errors.push_back(w.error);
      const ParamVector nu_prev = aux.nu;
      const double tol = nu_tolerance(nu_prev);
      const double r = check_nu_recursion(aux, server.w, w_old, errors, fresh, deltas, lr, M);
      const double rc = nu_recursion_residual(nu_prev, aux.nu, fresh, deltas, lr, M, drifts);
      rec.nu_residual = r;
      ++out.diag.nu_checks;
      out.diag.max_nu_residual = std::max(out.diag.max_nu_residual, r);
      out.diag.max_nu_residual_corrected = std::max(out.diag.max_nu_residual_corrected, rc);
      if (r > tol) ++out.diag.nu_violations;
      if (rc > tol) {
        ++out.diag.nu_violations_corrected;
        if (cfg.nu_check == NuCheck::strict) {
          write_state_dump(dump_dir, t, "auxiliary recursion violated", server, workers);
          char buf[160];
          std::snprintf(buf, sizeof buf, "iteration %lld: auxiliary recursion residual %.3e exceeds %.3e",
                        static_cast<long long>(t), rc, tol);
          throw std::runtime_error(buf);
        }
      }
    }
    if (cfg.lyapunov && *rec.lyapunov <= 0.0) ++out.diag.lyapunov_nonpositive;

    if (!all_finite(server.w)) {
      write_state_dump(dump_dir, t, "non-finite parameters", server, workers);
      throw std::runtime_error("seed " + std::to_string(seed) + ", iteration " + std::to_string(t) +
                               ": parameters became non-finite");
    }

    if (problem.test && cfg.eval_every > 0 && ((t + 1) % cfg.eval_every == 0 || t == T - 1)) {
      rec.test_accuracy = accuracy(task, server.w, *problem.test);
    }
    if (observer) observer(t, server.w);

    if (t % cfg.log_every == 0 || t == T - 1 || rec.test_accuracy || rec.grad_norm_sq) {
      out.records.push_back(rec);
    }
  }

  if (problem.test) {
    out.final_accuracy = !out.records.empty() && out.records.back().test_accuracy
                             ? *out.records.back().test_accuracy
                             : accuracy(task, server.w, *problem.test);
  }
  out.final_w = server.w;
  nlohmann::json echo = to_json(cfg);
  echo["seed"] = seed;
  echo["k"] = k;
  echo["dim"] = d;
  echo["iterations"] = T;
  out.summary = make_summary(out.records, echo, out.diag, out.downlink_bits, out.final_accuracy);
  return out;
}

nlohmann::json aggregate_seeds(const std::vector<SeedResult>& results) {
  auto stats = [&](auto&& get) -> nlohmann::json {
    std::vector<double> xs;
    for (const auto& r : results) {
      if (auto v = get(r)) xs.push_back(*v);
    }
    if (xs.empty()) return nullptr;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {{"mean", mean}, {"std", sd}, {"n", xs.size()}};
  };
  auto last = [](const SeedResult& r) { return r.records.empty() ? MetricsRecord{} : r.records.back(); };
  nlohmann::json agg;
  std::vector<std::uint64_t> seeds;
  for (const auto& r : results) seeds.push_back(r.seed);
  agg["seeds"] = seeds;
  agg["final_loss"] = stats([&](const SeedResult& r) { return std::optional<double>(last(r).loss); });
  agg["final_test_accuracy"] = stats([](const SeedResult& r) { return r.final_accuracy; });
  agg["rounds"] = stats([&](const SeedResult& r) { return std::optional<double>(static_cast<double>(last(r).cum_rounds)); });
  agg["bits_paper"] =
      stats([&](const SeedResult& r) { return std::optional<double>(static_cast<double>(last(r).cum_bits_paper)); });
  agg["bits_realistic"] = stats(
      [&](const SeedResult& r) { return std::optional<double>(static_cast<double>(last(r).cum_bits_realistic)); });
  agg["final_grad_norm_sq"] = stats([](const SeedResult& r) {
    std::optional<double> g;
    for (const auto& rec : r.records) {
      if (rec.grad_norm_sq) g = rec.grad_norm_sq;
    }
    return g;
  });
  return agg;
}

std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  validate(cfg);
  const Problem problem = build_problem(cfg.task);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    const std::string dir = out_dir.empty() ? std::string() : out_dir + "/seed_" + std::to_string(seed);
    SeedResult r = run_seed(cfg, problem, seed, {}, dir);
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      write_csv(dir + "/metrics.csv", r.records);
      write_json(dir + "/summary.json", r.summary);
    }
    results.push_back(std::move(r));
  }
  if (!out_dir.empty()) {
    nlohmann::json agg = aggregate_seeds(results);
    agg["config"] = to_json(cfg);
    write_json(out_dir + "/aggregate.json", agg);
  }
  return results;
}

Crossing first_crossing(const nlohmann::json& summary, std::optional<double> baseline_acc,
                        std::optional<double> baseline_loss, const std::string& label) {
  if (!baseline_acc && !baseline_loss) throw std::invalid_argument("compare: need an accuracy or loss baseline");
  Crossing c;
  c.label = label;
  if (!summary.contains("checkpoints")) throw std::invalid_argument("compare: '" + label + "' has no checkpoints");
  for (const auto& cp : summary.at("checkpoints")) {
    const bool hit = baseline_acc ? cp.at("acc").get<double>() >= *baseline_acc
                                  : cp.at("loss").get<double>() <= *baseline_loss;
    if (!hit) continue;
    c.reached = true;
    c.t = cp.at("t").get<std::int64_t>();
    c.rounds = cp.at("cum_rounds").get<long long>();
    c.bits_paper = cp.at("cum_bits_paper").get<long long>();
    c.bits_realistic = cp.at("cum_bits_realistic").get<long long>();
    break;
  }
  return c;
}

std::string format_comparison(const std::vector<Crossing>& rows, const std::string& baseline) {
  std::size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %10s  %12s  %14s  %14s\n", static_cast<int>(width), "run", "iteration",
                "# Rounds", "# Bits", "# Bits (idx)");
  os << "baseline: " << baseline << '\n' << line;
  for (const auto& r : rows) {
    if (!r.reached) {
      std::snprintf(line, sizeof line, "%-*s  %10s\n", static_cast<int>(width), r.label.c_str(), "not reached");
    } else {
      std::snprintf(line, sizeof line, "%-*s  %10lld  %12lld  %14.3e  %14.3e\n", static_cast<int>(width),
                    r.label.c_str(), static_cast<long long>(r.t), r.rounds, static_cast<double>(r.bits_paper),
                    static_cast<double>(r.bits_realistic));
    }
    os << line;
  }
  return os.str();
}

}  // namespace sasg
