#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedspa/attacks.hpp"
#include "fedspa/config.hpp"
#include "fedspa/presets.hpp"

using namespace fedspa;
namespace fs = std::filesystem;

namespace {

std::string config_error_key(const std::string& text, const std::vector<std::string>& ov = {}) {
  try {
    parse_config_text(text, ov);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fedspa_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ::setenv("FEDSPA_OUTPUT_ROOT", (dir_ / "out").c_str(), 1);
    std::ofstream(dir_ / "tiny.json") << R"({
      "name": "tiny",
      "dataset": {"per_class": 30, "input_dim": 8},
      "partition": {"N": 5},
      "network": {"hidden": [8]},
      "schedule": {"T": 4, "m": 3, "eval_cadence": 2},
      "attackers": [{"client_id": 1, "window_start": 1, "window_end": 2,
                     "attack": {"kind": "spa", "enhance_steps": 3, "attack_epochs": 1}}],
      "output": {"dir": "tiny"}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }

  int cli(const std::string& args) {
    std::string cmd = std::string(FEDSPA_CLI) + " " + args + " >" + (dir_ / "stdout").string() + " 2>" +
                      (dir_ / "stderr").string();
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }
  std::string config() const { return (dir_ / "tiny.json").string(); }
  fs::path out(const std::string& name = "tiny") const { return dir_ / "out" / name; }

  fs::path dir_;
};

}  // namespace

TEST(Config, MinimalConfigMaterializesDefaults) {
  auto c = parse_config_text("{}");
  EXPECT_EQ(c, ExperimentConfig{});
  auto j = to_json(c);
  EXPECT_EQ(j["schedule"]["T"], 200);
  EXPECT_EQ(j["schedule"]["m"], 5);
  EXPECT_EQ(j["partition"]["N"], 20);
  EXPECT_EQ(j["defense"]["clip_bound"], "inf");
  EXPECT_EQ(parse_config_text(j.dump()), c);
}

TEST(Config, RoundTripWithEveryFieldChanged) {
  ExperimentConfig c;
  c.name = "x";
  c.dataset.blobs.classes = 5;
  c.dataset.seed = 77;
  c.partition.alpha = 0.3;
  c.partition.seed = 1;
  c.network.hidden = {7, 3};
  c.network.embedding_layer = 0;
  c.schedule.checkpoint_rounds = {3, 9};
  c.schedule.workers = 4;
  AttackerEntry e;
  e.client_id = 2;
  e.attack.kind = AttackKind::pgd;
  e.attack.pgd_radius = 0.5;
  e.attack.align_metric = AlignMetric::kl;
  e.attack.toggles.consist = false;
  e.attack.trigger.beta = 0.123f;
  e.participation = Participation::forced_burst;
  e.burst_start = 110;
  c.attackers = {e};
  c.defense.kind = DefenseKind::clip;
  c.defense.clip_bound = 2.5;
  c.aggregation = AggregationMode::uniform;
  c.master_seed = 0xFFFFFFFFFFFFull;
  c.output.projection = true;
  EXPECT_EQ(parse_config_text(to_json(c).dump()), c);
}

TEST(Config, ValidationNamesTheKey) {
  EXPECT_EQ(config_error_key(R"({"attackers":[{"client_id":20}]})"), "attackers[0].client_id");
  EXPECT_EQ(config_error_key(R"({"attackers":[{"client_id":1},{"client_id":1}]})"), "attackers[1].client_id");
  EXPECT_EQ(config_error_key(R"({"schedule":{"bogus":1}})"), "schedule.bogus");
  EXPECT_EQ(config_error_key(R"({"schedule":{"T":"ten"}})"), "schedule.T");
  EXPECT_EQ(config_error_key(R"({"defense":{"kind":"median"}})"), "defense.kind");
  EXPECT_EQ(config_error_key(R"({"attackers":[{"client_id":0,"attack":{"target_label":8}}]})"),
            "attackers[0].attack.target_label");
  EXPECT_EQ(config_error_key(R"({"attackers":[{"client_id":0,"window_start":50,"window_end":40}]})"),
            "attackers[0].window_end");
  EXPECT_EQ(config_error_key(R"({"partition":{"alpha":0}})"), "partition.alpha");
  EXPECT_NE(config_error_key(R"({"defense":{"kind":"multikrum","f":3}})"), "<no error>");
}

TEST(Config, DuplicateKeysAndBadJson) {
  EXPECT_THROW(parse_config_text(R"({"name":"a","name":"b"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"schedule":{"T":1,"T":2}})"), ConfigError);
  EXPECT_THROW(parse_config_text("{"), ConfigError);
  EXPECT_THROW(parse_config_text("[]"), ConfigError);
}

TEST(Config, Overrides) {
  auto c = parse_config_text(R"({"attackers":[{"client_id":3}]})",
                             {"schedule.T=0", "name=sweep", "attackers[0].attack.lambda=6",
                              "network.hidden=[10,5]", "defense.clip_bound=\"inf\""});
  EXPECT_EQ(c.schedule.rounds, 0);
  EXPECT_EQ(c.name, "sweep");
  EXPECT_EQ(c.attackers[0].attack.lambda, 6.0);
  EXPECT_EQ(c.network.hidden, (std::vector<std::size_t>{10, 5}));
  EXPECT_EQ(config_error_key("{}", {"schedule.nope=1"}), "schedule.nope");
  EXPECT_THROW(parse_config_text("{}", {"attackers[0].client_id=1"}), ConfigError);
  EXPECT_THROW(parse_config_text("{}", {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(parse_config_text("{}", {R"(attackers=[{"client_id":0,"client_id":1}])"}), ConfigError);
}

TEST(Config, IdxDatasetNeedsPaths) {
  EXPECT_EQ(config_error_key(R"({"dataset":{"kind":"idx"}})").rfind("dataset.", 0), 0u);
}

TEST(Presets, FamiliesAndRoundTrip) {
  std::set<std::string> names;
  for (const auto& name : preset_names()) {
    auto configs = preset(name);
    EXPECT_FALSE(configs.empty()) << name;
    for (const auto& c : configs) {
      EXPECT_EQ(parse_config_text(to_json(c).dump()), c) << c.name;
      EXPECT_NO_THROW(validate(c)) << c.name;
      EXPECT_TRUE(names.insert(c.name).second) << "duplicate preset name " << c.name;
    }
  }
  EXPECT_THROW(preset("table9"), ArgumentError);
}

TEST(Presets, PaperGrids) {
  auto alphas = preset("alpha_sweep");
  ASSERT_EQ(alphas.size(), 5u);
  std::vector<double> a;
  for (const auto& c : alphas) a.push_back(c.partition.alpha);
  EXPECT_EQ(a, (std::vector<double>{0.5, 1, 5, 10, 1000}));

  auto lambdas = preset("lambda_sweep");
  ASSERT_EQ(lambdas.size(), 6u);
  std::vector<double> l;
  for (const auto& c : lambdas) l.push_back(c.attackers[0].attack.lambda);
  EXPECT_EQ(l, (std::vector<double>{0, 0.3, 0.6, 1, 6, 10}));

  for (const auto& c : preset("multi_label")) {
    ASSERT_EQ(c.attackers.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(c.attackers[std::size_t(i)].attack.target_label, i);
  }
  for (const auto& c : preset("persistence")) EXPECT_EQ(c.schedule.rounds, c.attackers[0].window_end + 101);
}

TEST_F(CliTest, DryRunWritesNothing) {
  EXPECT_EQ(cli("run " + config() + " --dry-run"), 0);
  EXPECT_FALSE(fs::exists(out()));
  EXPECT_EQ(parse_config_text(slurp(dir_ / "stdout")).name, "tiny");
}

TEST_F(CliTest, ZeroRoundsWritesReportOnly) {
  EXPECT_EQ(cli("run " + config() + " --set schedule.T=0"), 0);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(out())) files.push_back(e.path().filename().string());
  EXPECT_EQ(files, std::vector<std::string>{"report.json"});
}

TEST_F(CliTest, RunsAreByteIdentical) {
  ASSERT_EQ(cli("run " + config()), 0) << slurp(dir_ / "stderr");
  auto csv = slurp(out() / "rounds.csv"), report = slurp(out() / "report.json");
  auto trig = slurp(out() / "trigger_1.bin");
  EXPECT_EQ(csv.rfind("round,acc,asr,selected_ids,excluded_ids,global_norm,defense,attack\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  ASSERT_EQ(cli("run " + config() + " --set schedule.workers=2 --set output.dir=\"again\""), 0);
  EXPECT_EQ(slurp(out("again") / "rounds.csv"), csv);
  EXPECT_EQ(slurp(out("again") / "trigger_1.bin"), trig);
  auto a = json::parse(report), b = json::parse(slurp(out("again") / "report.json"));
  b["config"]["schedule"]["workers"] = 1;
  b["config"]["output"]["dir"] = "tiny";
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli("run " + (dir_ / "missing.json").string()), 4);
  std::ofstream(dir_ / "bad.json") << R"({"schedule":{"T":-1}})";
  EXPECT_EQ(cli("run " + (dir_ / "bad.json").string()), 2);
  EXPECT_NE(slurp(dir_ / "stderr").find("schedule.T"), std::string::npos);
  EXPECT_EQ(cli("run " + config() + " --set schedule.lr=1e30"), 3);
  EXPECT_TRUE(fs::exists(out() / "rounds.csv"));
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("preset nope --out " + dir_.string()), 2);
}

TEST_F(CliTest, PresetFilesParse) {
  ASSERT_EQ(cli("preset component_ablation --out " + (dir_ / "p").string()), 0);
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "p")) {
    EXPECT_NO_THROW(parse_config(e.path().string()));
    ++n;
  }
  EXPECT_EQ(n, int(preset("component_ablation").size()));
}

TEST_F(CliTest, TriggerExportImportRoundTrip) {
  TriggerConfig tc;
  tc.mode = TriggerMode::patch;
  auto t = initial_trigger(tc, 8, 4);
  t.pattern[2] = 0.3f;
  save_trigger((dir_ / "t.bin").string(), t);
  ASSERT_EQ(cli("export-trigger " + (dir_ / "t.bin").string() + " --out " + (dir_ / "t.json").string()), 0);
  ASSERT_EQ(cli("import-trigger " + (dir_ / "t.json").string() + " --out " + (dir_ / "u.bin").string()), 0);
  EXPECT_EQ(load_trigger((dir_ / "u.bin").string()), t);

  std::ofstream(dir_ / "broken.json") << R"({"mode":"blend"})";
  EXPECT_EQ(cli("import-trigger " + (dir_ / "broken.json").string() + " --out " + (dir_ / "v.bin").string()), 4);
}
