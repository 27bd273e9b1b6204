#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasg/config.hpp"
#include "sasg/metrics.hpp"
#include "sasg/tasks.hpp"

namespace sasg {

/// Training data, optional held-out set and whatever the task knows analytically.
struct Problem {
  Task task;
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
  std::optional<double> smoothness;
  std::optional<double> f_star;
};

/// Builds the dataset named by the task config. MNIST files are read from
/// task.data_dir or $SASG_DATA_DIR.
Problem build_problem(const TaskConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;
  DiagnosticTotals diag;
  std::optional<double> final_accuracy;
  ParamVector final_w;
  long long downlink_bits = 0;
  nlohmann::json summary;
};

/// Called after every server step with (t, w^{t+1}).
using StepObserver = std::function<void(std::int64_t, const ParamVector&)>;

Index total_iterations(const ExperimentConfig& cfg, const Problem& problem);

/// One seed of the bulk-synchronous loop. Throws on a non-finite loss or
/// parameter (after writing state_dump.json into dump_dir when given) and,
/// with nu_check = strict, on a recursion violation.
SeedResult run_seed(const ExperimentConfig& cfg, const Problem& problem, std::uint64_t seed,
                    const StepObserver& observer = {}, const std::string& dump_dir = {});

/// Mean and sample standard deviation of the headline numbers across seeds.
nlohmann::json aggregate_seeds(const std::vector<SeedResult>& results);

/// Runs every configured seed. With out_dir set, writes
/// out_dir/seed_<s>/{metrics.csv,summary.json} and out_dir/aggregate.json.
std::vector<SeedResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = {});

// --- comparison ---

struct Crossing {
  std::string label;
  bool reached = false;
  std::int64_t t = 0;
  long long rounds = 0;
  long long bits_paper = 0;
  long long bits_realistic = 0;
};

/// First checkpoint with acc >= baseline_acc (or loss <= baseline_loss).
Crossing first_crossing(const nlohmann::json& summary, std::optional<double> baseline_acc,
                        std::optional<double> baseline_loss, const std::string& label);

std::string format_comparison(const std::vector<Crossing>& rows, const std::string& baseline);

// --- self test ---

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Compressor, recursion and bound property checks on small synthetic problems.
std::vector<CheckResult> selftest();

}  // namespace sasg
