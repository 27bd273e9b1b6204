#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasg/tasks.hpp"
#include "sasg/worker.hpp"

namespace sasg {

/// Sectioned key/value document:
///
///   # comment            (also ';')
///   [section]
///   key = value          (whitespace around key and value is trimmed)
///
/// Keys before the first header belong to section "". Duplicate keys: last wins.
class IniDocument {
 public:
  static IniDocument parse(std::istream& in, const std::string& origin = "<config>");
  static IniDocument load(const std::string& path);

  void set(const std::string& section, const std::string& key, std::string value);
  /// "section.key=value"
  void apply_override(const std::string& assignment);
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

enum class Mode { sgd, sparse, lasg, sasg };
enum class NuCheck { off, report, strict };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct TaskConfig {
  TaskKind kind = TaskKind::quadratic;
  std::string dataset;  // quadratic: gaussian|identity; logistic: blobs; fc_net: mnist|blobs
  Index dim = 50;
  Index examples = 1000;
  Index test_examples = 0;
  Index rows = 1;
  double noise = 0.0;
  double l2 = 0.0;
  std::vector<Index> layers{784, 512, 10};
  int classes = 10;
  double separation = 1.0;
  std::uint64_t data_seed = 1;
  std::string data_dir;  // falls back to $SASG_DATA_DIR
};

struct LrDecay {
  double factor = 1.0;
  int epoch = 0;
};

struct ExperimentConfig {
  TaskConfig task;

  int workers = 10;
  Index batch = 10;
  std::int64_t iterations = 0;
  int epochs = 0;  // used when iterations == 0
  double gamma = 0.005;
  std::vector<LrDecay> lr_decay;
  Sampling sampling = Sampling::with_replacement;

  Mode mode = Mode::sasg;
  SelectionRule rule = SelectionRule::sasg;
  int max_delay = 10;
  std::string alpha = "1/(2gamma)";  // number, "1/(2gamma)", "1/gamma" or a list of D numbers
  double k_fraction = 0.01;

  std::vector<std::uint64_t> seeds{1};
  int threads = 1;

  int eval_every = 0;
  int grad_norm_every = 50;
  NuCheck nu_check = NuCheck::off;
  bool error_bound = true;
  bool lyapunov = false;
  std::optional<double> smoothness;
  std::optional<double> f_star;
  int log_every = 1;

  std::string out_dir;
};

/// Throws std::invalid_argument on unknown sections/keys or malformed values.
ExperimentConfig config_from_ini(const IniDocument& doc);

/// Parameters pinned by the mode: sgd -> k=d, alpha=0, D=1; sparse -> alpha=0,
/// D=1; lasg -> k=d; sasg -> as configured.
void apply_mode(ExperimentConfig& cfg, Mode mode);

/// Throws std::invalid_argument if the configuration cannot run.
void validate(const ExperimentConfig& cfg);

/// Expands the alpha template into D weights for the given step size.
std::vector<double> resolve_alphas(const std::string& spec, double gamma, int max_delay);

nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace sasg
