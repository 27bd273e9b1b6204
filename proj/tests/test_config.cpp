#include <gtest/gtest.h>

#include <sstream>

#include "sasg/config.hpp"

using namespace sasg;

namespace {
IniDocument parse(const std::string& text) {
  std::istringstream in(text);
  return IniDocument::parse(in);
}

const char* kBase = R"(
# comment
[task]
kind = quadratic
dim = 20          ; trailing comment
examples = 200

[train]
workers = 4
iterations = 100
gamma = 0.01
lr_decay = 0.1@20, 0.5@30

[algorithm]
max_delay = 5
alpha = 1/gamma
k_fraction = 0.1

[run]
seeds = 3, 4, 5
)";
}  // namespace

TEST(Ini, SectionsAndOverrides) {
  IniDocument doc = parse(kBase);
  EXPECT_EQ(doc.get("task", "dim").value(), "20");
  EXPECT_FALSE(doc.get("task", "missing").has_value());
  doc.apply_override("train.gamma=0.02");
  EXPECT_EQ(doc.get("train", "gamma").value(), "0.02");
  EXPECT_THROW(doc.apply_override("gamma=0.1"), std::invalid_argument);
  EXPECT_THROW(parse("[task\nkind=x"), std::invalid_argument);
  EXPECT_THROW(parse("[task]\njust a line"), std::invalid_argument);
  EXPECT_EQ(parse("[a]\nk=1\nk=2\n").get("a", "k").value(), "2");
}

TEST(Config, Parses) {
  const ExperimentConfig c = config_from_ini(parse(kBase));
  EXPECT_EQ(c.task.kind, TaskKind::quadratic);
  EXPECT_EQ(c.task.dataset, "gaussian");
  EXPECT_EQ(c.task.dim, 20);
  EXPECT_EQ(c.workers, 4);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  ASSERT_EQ(c.lr_decay.size(), 2u);
  EXPECT_EQ(c.lr_decay[1].epoch, 30);
  EXPECT_DOUBLE_EQ(c.lr_decay[0].factor, 0.1);
  EXPECT_EQ(c.mode, Mode::sasg);
  const auto a = resolve_alphas(c.alpha, c.gamma, c.max_delay);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_DOUBLE_EQ(a[0], 100.0);
}

TEST(Config, ModePinsParameters) {
  IniDocument doc = parse(kBase);
  doc.set("algorithm", "mode", "sgd");
  ExperimentConfig c = config_from_ini(doc);
  EXPECT_EQ(c.k_fraction, 1.0);
  EXPECT_EQ(c.max_delay, 1);
  EXPECT_EQ(resolve_alphas(c.alpha, c.gamma, c.max_delay), std::vector<double>{0.0});

  doc.set("algorithm", "mode", "sparse");
  c = config_from_ini(doc);
  EXPECT_EQ(c.k_fraction, 0.1);
  EXPECT_EQ(c.max_delay, 1);

  doc.set("algorithm", "mode", "lasg");
  c = config_from_ini(doc);
  EXPECT_EQ(c.k_fraction, 1.0);
  EXPECT_EQ(c.max_delay, 5);
  EXPECT_DOUBLE_EQ(resolve_alphas(c.alpha, c.gamma, c.max_delay)[4], 100.0);

  doc.set("algorithm", "mode", "fast");
  EXPECT_THROW(config_from_ini(doc), std::invalid_argument);
}

TEST(Config, AlphaTemplates) {
  EXPECT_DOUBLE_EQ(resolve_alphas("1/(2gamma)", 0.005, 3)[2], 100.0);
  EXPECT_DOUBLE_EQ(resolve_alphas("1 / (2 * gamma)", 0.01, 1)[0], 50.0);
  EXPECT_EQ(resolve_alphas("2.5", 0.1, 2), (std::vector<double>{2.5, 2.5}));
  EXPECT_EQ(resolve_alphas("1, 2, 3", 0.1, 3), (std::vector<double>{1, 2, 3}));
  EXPECT_THROW(resolve_alphas("1, 2", 0.1, 3), std::invalid_argument);
  EXPECT_THROW(resolve_alphas("-1", 0.1, 3), std::invalid_argument);
  EXPECT_THROW(resolve_alphas("lots", 0.1, 3), std::invalid_argument);
}

TEST(Config, RejectsBadInput) {
  auto with = [](const std::string& section, const std::string& key, const std::string& value) {
    IniDocument doc = parse(kBase);
    doc.set(section, key, value);
    return doc;
  };
  EXPECT_THROW(config_from_ini(with("train", "gama", "0.1")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("bogus", "x", "1")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("train", "gamma", "-1")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("train", "workers", "4x")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("algorithm", "k_fraction", "1.5")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("run", "seeds", "")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("train", "iterations", "0")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("task", "dataset", "mnist")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("diagnostics", "error_bound", "maybe")), std::invalid_argument);
  EXPECT_THROW(config_from_ini(with("train", "lr_decay", "0.1")), std::invalid_argument);
}

TEST(Config, MnistDefaultsToWholeFile) {
  const ExperimentConfig c = config_from_ini(parse("[task]\nkind = fc_net\n[train]\nepochs = 1\n"));
  EXPECT_EQ(c.task.dataset, "mnist");
  EXPECT_EQ(c.task.examples, 0);
  EXPECT_EQ(c.task.layers, (std::vector<Index>{784, 512, 10}));
}

TEST(Config, JsonEcho) {
  const auto j = to_json(config_from_ini(parse(kBase)));
  EXPECT_EQ(j["algorithm"]["mode"], "sasg");
  EXPECT_EQ(j["algorithm"]["alphas"].size(), 5u);
  EXPECT_EQ(j["train"]["lr_decay"][0]["epoch"], 20);
}
