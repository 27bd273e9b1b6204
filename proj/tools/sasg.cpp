// sasg: run / compare / selftest front end for the simulator.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sasg/config.hpp"
#include "sasg/simulator.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& mode, const std::vector<std::uint64_t>& seeds,
            const std::string& out, const std::vector<std::string>& overrides, int threads) {
  sasg::IniDocument doc = sasg::IniDocument::load(config_path);
  for (const auto& o : overrides) doc.apply_override(o);
  if (!mode.empty()) doc.set("algorithm", "mode", mode);
  if (!out.empty()) doc.set("output", "dir", out);
  if (threads > 0) doc.set("run", "threads", std::to_string(threads));
  if (!seeds.empty()) {
    std::string list;
    for (auto s : seeds) list += (list.empty() ? "" : ",") + std::to_string(s);
    doc.set("run", "seeds", list);
  }
  const sasg::ExperimentConfig cfg = sasg::config_from_ini(doc);
  if (cfg.out_dir.empty()) throw std::invalid_argument("no output directory: pass --out or set output.dir");

  const auto results = sasg::run_experiment(cfg, cfg.out_dir);
  for (const auto& r : results) {
    const auto& last = r.records.back();
    std::printf("seed %llu: loss %.6g  rounds %lld  bits %lld", static_cast<unsigned long long>(r.seed), last.loss,
                last.cum_rounds, last.cum_bits_paper);
    if (r.final_accuracy) std::printf("  acc %.4f", *r.final_accuracy);
    std::printf("\n");
  }
  std::printf("wrote %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_compare(std::optional<double> acc, std::optional<double> loss, const std::vector<std::string>& files) {
  if (acc.has_value() == loss.has_value()) throw std::invalid_argument("pass exactly one of --baseline-acc / --baseline-loss");
  std::vector<sasg::Crossing> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw std::runtime_error("cannot open '" + f + "'");
    rows.push_back(sasg::first_crossing(nlohmann::json::parse(in), acc, loss, f));
  }
  char label[64];
  if (acc) {
    std::snprintf(label, sizeof label, "test accuracy >= %g", *acc);
  } else {
    std::snprintf(label, sizeof label, "loss <= %g", *loss);
  }
  std::cout << sasg::format_comparison(rows, label);
  return 0;
}

int cmd_selftest() {
  int failed = 0;
  for (const auto& c : sasg::selftest()) {
    std::printf("[%s] %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    if (!c.passed) ++failed;
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parameter-server simulator for sparsified, lazily aggregated SGD"};
  app.require_subcommand(1);

  std::string config_path, mode, out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
  int threads = 0;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("--config,-c", config_path, "INI experiment file")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "sgd | sparse | lasg | sasg");
  run->add_option("--seed", seeds, "seed(s), overrides run.seeds");
  run->add_option("--out,-o", out, "output directory");
  run->add_option("--set", overrides, "section.key=value override (repeatable)");
  run->add_option("--threads", threads, "worker threads");

  std::optional<double> baseline_acc, baseline_loss;
  std::vector<std::string> summaries;
  auto* compare = app.add_subcommand("compare", "rounds/bits needed to reach a baseline");
  compare->add_option("--baseline-acc", baseline_acc, "test accuracy threshold");
  compare->add_option("--baseline-loss", baseline_loss, "loss threshold");
  compare->add_option("summaries", summaries, "summary.json files")->required()->expected(2, -1);

  auto* self = app.add_subcommand("selftest", "compressor, recursion and bound property checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, mode, seeds, out, overrides, threads);
    if (*compare) return cmd_compare(baseline_acc, baseline_loss, summaries);
    if (*self) return cmd_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
