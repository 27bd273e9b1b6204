#include "sasg/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sasg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw std::invalid_argument("config: " + key + " = '" + value + "': " + why);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "trailing characters");
    return x;
  } catch (const std::logic_error&) {
    bad_value(key, v, "expected a number");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) bad_value(key, v, "trailing characters");
    return x;
  } catch (const std::logic_error&) {
    bad_value(key, v, "expected an integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "expected true/false");
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"task",
       {"kind", "dataset", "dim", "examples", "test_examples", "rows", "noise", "l2", "layers", "classes",
        "separation", "data_seed", "data_dir"}},
      {"train", {"workers", "batch", "iterations", "epochs", "gamma", "lr_decay", "sampling"}},
      {"algorithm", {"mode", "rule", "max_delay", "alpha", "k_fraction"}},
      {"run", {"seeds", "threads"}},
      {"diagnostics",
       {"eval_every", "grad_norm_every", "nu_check", "error_bound", "lyapunov", "smoothness", "f_star", "log_every"}},
      {"output", {"dir"}},
  };
  return keys;
}

}  // namespace

IniDocument IniDocument::parse(std::istream& in, const std::string& origin) {
  IniDocument doc;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    doc.set(section, key, trim(line.substr(eq + 1)));
  }
  return doc;
}

IniDocument IniDocument::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  return parse(in, path);
}

void IniDocument::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = std::move(value);
}

void IniDocument::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw std::invalid_argument("override '" + assignment + "' must look like section.key=value");
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)));
}

std::optional<std::string> IniDocument::get(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::sgd: return "sgd";
    case Mode::sparse: return "sparse";
    case Mode::lasg: return "lasg";
    case Mode::sasg: return "sasg";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  if (name == "sgd") return Mode::sgd;
  if (name == "sparse") return Mode::sparse;
  if (name == "lasg") return Mode::lasg;
  if (name == "sasg") return Mode::sasg;
  throw std::invalid_argument("unknown mode '" + name + "' (expected sgd|sparse|lasg|sasg)");
}

std::vector<double> resolve_alphas(const std::string& spec, double gamma, int max_delay) {
  const std::string s = trim(spec);
  std::string compact;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
  }
  double value = 0.0;
  if (compact == "1/(2gamma)" || compact == "1/(2*gamma)") {
    value = 1.0 / (2.0 * gamma);
  } else if (compact == "1/gamma") {
    value = 1.0 / gamma;
  } else if (compact.find(',') != std::string::npos) {
    std::vector<double> list;
    for (const auto& part : split(compact, ',')) list.push_back(parse_double("algorithm.alpha", part));
    if (static_cast<int>(list.size()) != max_delay) {
      bad_value("algorithm.alpha", spec, "list length must equal max_delay");
    }
    for (double a : list) {
      if (a < 0.0) bad_value("algorithm.alpha", spec, "weights must be non-negative");
    }
    return list;
  } else {
    value = parse_double("algorithm.alpha", compact);
  }
  if (!(value >= 0.0)) bad_value("algorithm.alpha", spec, "weights must be non-negative");
  return std::vector<double>(static_cast<std::size_t>(max_delay), value);
}

ExperimentConfig config_from_ini(const IniDocument& doc) {
  for (const auto& [section, entries] : doc.sections()) {
    const auto known = known_keys().find(section);
    if (known == known_keys().end()) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : entries) {
      if (!known->second.count(key)) throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
    }
  }

  ExperimentConfig cfg;
  auto str = [&](const char* section, const char* key, auto&& apply) {
    if (auto v = doc.get(section, key)) apply(std::string(section) + "." + key, *v);
  };

  auto& t = cfg.task;
  str("task", "kind", [&](const auto&, const auto& v) { t.kind = task_kind_from_string(v); });
  str("task", "dataset", [&](const auto&, const auto& v) { t.dataset = v; });
  str("task", "dim", [&](const auto& k, const auto& v) { t.dim = parse_int(k, v); });
  str("task", "examples", [&](const auto& k, const auto& v) { t.examples = parse_int(k, v); });
  str("task", "test_examples", [&](const auto& k, const auto& v) { t.test_examples = parse_int(k, v); });
  str("task", "rows", [&](const auto& k, const auto& v) { t.rows = parse_int(k, v); });
  str("task", "noise", [&](const auto& k, const auto& v) { t.noise = parse_double(k, v); });
  str("task", "l2", [&](const auto& k, const auto& v) { t.l2 = parse_double(k, v); });
  str("task", "layers", [&](const auto& k, const auto& v) {
    t.layers.clear();
    for (const auto& part : split(v, ',')) t.layers.push_back(parse_int(k, part));
  });
  str("task", "classes", [&](const auto& k, const auto& v) { t.classes = static_cast<int>(parse_int(k, v)); });
  str("task", "separation", [&](const auto& k, const auto& v) { t.separation = parse_double(k, v); });
  str("task", "data_seed", [&](const auto& k, const auto& v) { t.data_seed = static_cast<std::uint64_t>(parse_int(k, v)); });
  str("task", "data_dir", [&](const auto&, const auto& v) { t.data_dir = v; });
  if (t.dataset.empty()) {
    t.dataset = t.kind == TaskKind::quadratic ? "gaussian" : (t.kind == TaskKind::logistic ? "blobs" : "mnist");
  }
  // MNIST: 0 means the whole file.
  if (t.dataset == "mnist" && !doc.get("task", "examples")) t.examples = 0;

  str("train", "workers", [&](const auto& k, const auto& v) { cfg.workers = static_cast<int>(parse_int(k, v)); });
  str("train", "batch", [&](const auto& k, const auto& v) { cfg.batch = parse_int(k, v); });
  str("train", "iterations", [&](const auto& k, const auto& v) { cfg.iterations = parse_int(k, v); });
  str("train", "epochs", [&](const auto& k, const auto& v) { cfg.epochs = static_cast<int>(parse_int(k, v)); });
  str("train", "gamma", [&](const auto& k, const auto& v) { cfg.gamma = parse_double(k, v); });
  str("train", "lr_decay", [&](const auto& k, const auto& v) {
    // factor@epoch, comma separated: "0.1@20, 0.1@30"
    for (const auto& part : split(v, ',')) {
      const auto at = part.find('@');
      if (at == std::string::npos) bad_value(k, v, "expected factor@epoch entries");
      cfg.lr_decay.push_back({parse_double(k, trim(part.substr(0, at))),
                              static_cast<int>(parse_int(k, trim(part.substr(at + 1))))});
    }
  });
  str("train", "sampling", [&](const auto& k, const auto& v) {
    if (v == "replacement") {
      cfg.sampling = Sampling::with_replacement;
    } else if (v == "epoch") {
      cfg.sampling = Sampling::without_replacement;
    } else {
      bad_value(k, v, "expected replacement|epoch");
    }
  });

  str("algorithm", "rule", [&](const auto& k, const auto& v) {
    if (v == "sasg") {
      cfg.rule = SelectionRule::sasg;
    } else if (v == "lag") {
      cfg.rule = SelectionRule::lag;
    } else {
      bad_value(k, v, "expected sasg|lag");
    }
  });
  str("algorithm", "max_delay", [&](const auto& k, const auto& v) { cfg.max_delay = static_cast<int>(parse_int(k, v)); });
  str("algorithm", "alpha", [&](const auto&, const auto& v) { cfg.alpha = v; });
  str("algorithm", "k_fraction", [&](const auto& k, const auto& v) { cfg.k_fraction = parse_double(k, v); });

  str("run", "seeds", [&](const auto& k, const auto& v) {
    cfg.seeds.clear();
    for (const auto& part : split(v, ',')) cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(k, part)));
  });
  str("run", "threads", [&](const auto& k, const auto& v) { cfg.threads = static_cast<int>(parse_int(k, v)); });

  str("diagnostics", "eval_every", [&](const auto& k, const auto& v) { cfg.eval_every = static_cast<int>(parse_int(k, v)); });
  str("diagnostics", "grad_norm_every", [&](const auto& k, const auto& v) { cfg.grad_norm_every = static_cast<int>(parse_int(k, v)); });
  str("diagnostics", "nu_check", [&](const auto& k, const auto& v) {
    if (v == "off") {
      cfg.nu_check = NuCheck::off;
    } else if (v == "report") {
      cfg.nu_check = NuCheck::report;
    } else if (v == "strict") {
      cfg.nu_check = NuCheck::strict;
    } else {
      bad_value(k, v, "expected off|report|strict");
    }
  });
  str("diagnostics", "error_bound", [&](const auto& k, const auto& v) { cfg.error_bound = parse_bool(k, v); });
  str("diagnostics", "lyapunov", [&](const auto& k, const auto& v) { cfg.lyapunov = parse_bool(k, v); });
  str("diagnostics", "smoothness", [&](const auto& k, const auto& v) { cfg.smoothness = parse_double(k, v); });
  str("diagnostics", "f_star", [&](const auto& k, const auto& v) { cfg.f_star = parse_double(k, v); });
  str("diagnostics", "log_every", [&](const auto& k, const auto& v) { cfg.log_every = static_cast<int>(parse_int(k, v)); });

  str("output", "dir", [&](const auto&, const auto& v) { cfg.out_dir = v; });

  // Mode last: it pins parameters set above.
  Mode mode = Mode::sasg;
  str("algorithm", "mode", [&](const auto&, const auto& v) { mode = mode_from_string(v); });
  apply_mode(cfg, mode);
  validate(cfg);
  return cfg;
}

void apply_mode(ExperimentConfig& cfg, Mode mode) {
  cfg.mode = mode;
  switch (mode) {
    case Mode::sgd:
      cfg.k_fraction = 1.0;
      cfg.alpha = "0";
      cfg.max_delay = 1;
      break;
    case Mode::sparse:
      cfg.alpha = "0";
      cfg.max_delay = 1;
      break;
    case Mode::lasg:
      cfg.k_fraction = 1.0;
      break;
    case Mode::sasg:
      break;
  }
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& why) { throw std::invalid_argument("config: " + why); };
  if (cfg.workers < 1) fail("train.workers must be >= 1");
  if (cfg.batch < 1) fail("train.batch must be >= 1");
  if (cfg.iterations <= 0 && cfg.epochs <= 0) fail("set train.iterations or train.epochs");
  if (!(cfg.gamma > 0.0)) fail("train.gamma must be positive");
  for (const auto& d : cfg.lr_decay) {
    if (!(d.factor > 0.0) || d.epoch < 0) fail("train.lr_decay entries need factor > 0 and epoch >= 0");
  }
  if (cfg.max_delay < 1) fail("algorithm.max_delay must be >= 1");
  if (!(cfg.k_fraction > 0.0) || cfg.k_fraction > 1.0) fail("algorithm.k_fraction must lie in (0, 1]");
  resolve_alphas(cfg.alpha, cfg.gamma, cfg.max_delay);
  if (cfg.seeds.empty()) fail("run.seeds must be non-empty");
  if (cfg.threads < 1) fail("run.threads must be >= 1");
  if (cfg.log_every < 1) fail("diagnostics.log_every must be >= 1");
  if (cfg.eval_every < 0 || cfg.grad_norm_every < 0) fail("diagnostics intervals must be >= 0");
  if (cfg.mode == Mode::sgd && (cfg.k_fraction != 1.0 || resolve_alphas(cfg.alpha, cfg.gamma, cfg.max_delay)[0] != 0.0)) {
    fail("mode sgd requires k_fraction = 1 and zero alphas");
  }
  if (cfg.mode == Mode::lasg && cfg.k_fraction != 1.0) fail("mode lasg requires k_fraction = 1");
  const auto& t = cfg.task;
  if (t.kind == TaskKind::quadratic && t.dataset != "gaussian" && t.dataset != "identity") {
    fail("quadratic tasks use dataset gaussian|identity");
  }
  if (t.kind == TaskKind::logistic && t.dataset != "blobs") fail("logistic tasks use dataset blobs");
  if (t.kind == TaskKind::fc_net && t.dataset != "mnist" && t.dataset != "blobs") {
    fail("fc_net tasks use dataset mnist|blobs");
  }
  if (t.kind == TaskKind::fc_net && t.layers.size() < 2) fail("task.layers needs at least two sizes");
  if (t.dim < 1 || t.rows < 1 || t.examples < (t.dataset == "mnist" ? 0 : 1) || t.test_examples < 0) {
    fail("task sizes must be positive");
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = {{"kind", to_string(cfg.task.kind)},
               {"dataset", cfg.task.dataset},
               {"dim", cfg.task.dim},
               {"examples", cfg.task.examples},
               {"test_examples", cfg.task.test_examples},
               {"rows", cfg.task.rows},
               {"noise", cfg.task.noise},
               {"l2", cfg.task.l2},
               {"layers", cfg.task.layers},
               {"classes", cfg.task.classes},
               {"separation", cfg.task.separation},
               {"data_seed", cfg.task.data_seed}};
  nlohmann::json decay = nlohmann::json::array();
  for (const auto& d : cfg.lr_decay) decay.push_back({{"factor", d.factor}, {"epoch", d.epoch}});
  j["train"] = {{"workers", cfg.workers},
                {"batch", cfg.batch},
                {"iterations", cfg.iterations},
                {"epochs", cfg.epochs},
                {"gamma", cfg.gamma},
                {"lr_decay", decay},
                {"sampling", cfg.sampling == Sampling::with_replacement ? "replacement" : "epoch"}};
  j["algorithm"] = {{"mode", to_string(cfg.mode)},
                    {"rule", cfg.rule == SelectionRule::sasg ? "sasg" : "lag"},
                    {"max_delay", cfg.max_delay},
                    {"alpha", cfg.alpha},
                    {"alphas", resolve_alphas(cfg.alpha, cfg.gamma, cfg.max_delay)},
                    {"k_fraction", cfg.k_fraction}};
  j["run"] = {{"seeds", cfg.seeds}, {"threads", cfg.threads}};
  return j;
}

}  // namespace sasg
