#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <string>

#include "surgagg/cli.hpp"

using namespace surgagg;

namespace {

const char* kMinimal = R"({
  "method": "surgical",
  "T": 3,
  "scenario": {"K": 2, "M": 3, "d": 5, "n_per_client": 200, "n_test": 300, "n_stats": 64,
               "shared_count": 1, "unique_count": 2}
})";

const char* kNamed = R"({
  "method": "fl_partial_loss",
  "strategy": "fedbn_plus",
  "T": 7, "E": 2, "lr": 0.125, "batch_size": 16, "sample_weighted": true,
  "seeds": {"init": 7, "shuffle": 8},
  "feature_layers": [{"kind": "dense", "width": 9}, {"kind": "batchnorm"}, {"kind": "relu"}],
  "scenario": {"K": 3, "M": 4, "d": 6, "n_per_client": 120, "seed": 3,
               "class_names": ["a", "b", "c", "d"],
               "client_classes": [["b", "a"], ["b", "c"], ["c", "d", "a"]],
               "skew": "feature_shift", "shift_sigma": 0.3, "label_noise": 0.1, "val_fraction": 0.25}
})";

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("surgagg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

struct CliResult {
  int code = -1;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch, const std::string& env = "") {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + SURGAGG_CLI_PATH + "' " + args + " 2>'" +
                          err.string() + "' >/dev/null";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = fs::exists(err) ? read_text_file(err) : "";
  return r;
}

std::string config_file(const TempDir& dir, const std::string& name, const std::string& text) {
  const auto p = dir / name;
  write_text_file(p, text);
  return p.string();
}

}  // namespace

TEST(Config, RoundTripIsIdentity) {
  for (const char* text : {kMinimal, kNamed}) {
    const auto a = config_from_json(Json::parse(text));
    const auto j = config_to_json(a);
    const auto b = config_from_json(j);
    EXPECT_EQ(a, b);
    EXPECT_EQ(config_to_json(b).dump(), j.dump());
  }
}

TEST(Config, NamesResolveToGlobalIndices) {
  const auto c = config_from_json(Json::parse(kNamed));
  EXPECT_EQ(c.scenario.client_classes[0], (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(build_registry(c.scenario).client_classes(0), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(c.strategy, Strategy::fedbn_plus);
  EXPECT_EQ(c.feature_layers.size(), 3u);
}

TEST(Config, SeedShorthandSetsEverySeed) {
  auto j = Json::parse(kMinimal);
  j["seed"] = 42;
  const auto c = config_from_json(j);
  EXPECT_EQ(c.scenario.seed, 42u);
  EXPECT_EQ(c.seeds.init, 42u);
  EXPECT_EQ(c.seeds.shuffle, 42u);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_error = [](Json j, const std::string& field) {
    try {
      config_from_json(j);
      ADD_FAILURE() << "accepted config missing " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  const auto base = Json::parse(kMinimal);
  for (const char* f : {"K", "M", "d", "n_per_client"}) {
    auto j = base;
    j["scenario"].erase(f);
    expect_error(j, std::string("scenario.") + f);
  }
  auto j = base;
  j.erase("method");
  expect_error(j, "method");
  j = base;
  j["scenario"]["K"] = "four";
  expect_error(j, "scenario.K");
  j = base;
  j["learning_rate"] = 0.1;
  expect_error(j, "learning_rate");
  j = base;
  j["method"] = "fedprox";
  expect_error(j, "method");
  j = base;
  j["E"] = 10;
  expect_error(j, "T must be >= E");
  j = Json::parse(kNamed);
  j["scenario"]["client_classes"][1][0] = "zebra";
  expect_error(j, "scenario.client_classes[1]");
}

TEST(Config, ManifestHashTracksConfig) {
  auto a = config_from_json(Json::parse(kMinimal));
  auto b = a;
  EXPECT_EQ(manifest_hash(a), manifest_hash(b));
  b.set_all_seeds(9);
  EXPECT_NE(manifest_hash(a), manifest_hash(b));
  EXPECT_EQ(manifest_hash(a).size(), 16u);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto cfg = config_from_json(Json::parse(kNamed));
  cfg.method = Method::pfl;
  cfg.strategy = Strategy::fedbn;
  auto res = run_experiment(cfg);
  const auto models = checkpoint_models(res);
  ASSERT_EQ(models.size(), 3u);
  const auto text = checkpoint_text(models);
  const auto back = parse_checkpoint(text);
  ASSERT_EQ(back.size(), models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    EXPECT_EQ(back[i].first, models[i].first);
    EXPECT_EQ(back[i].second.arch, models[i].second.arch);
    EXPECT_EQ(back[i].second.params, models[i].second.params);
    EXPECT_EQ(back[i].second.head_classes, models[i].second.head_classes);
  }
  EXPECT_EQ(checkpoint_text(back), text);
}

TEST(Checkpoint, RejectsMalformedInput) {
  Architecture arch = Architecture::default_mlp(3);
  Model m{arch, init_model(arch, 2, 1), {0, 1}};
  const auto text = checkpoint_text({{"global", m}});
  EXPECT_THROW(parse_checkpoint("not a checkpoint\n"), ConfigError);
  EXPECT_THROW(parse_checkpoint(text.substr(0, text.size() / 2)), ConfigError);
  std::string bad = text;
  bad.replace(bad.find("tensor dense0.b"), 15, "tensor dense9.b");
  EXPECT_THROW(parse_checkpoint(bad), ConfigError);
}

TEST(Dataset, DumpAndLoadRoundTrip) {
  TempDir dir;
  auto cfg = config_from_json(Json::parse(kNamed));
  const auto sc = generate_synthetic(cfg.scenario);
  dump_scenario(sc, dir.path());
  const auto back = load_scenario(dir.path());
  EXPECT_EQ(back.spec, sc.spec);
  EXPECT_EQ(back.registry, sc.registry);
  EXPECT_EQ(back.test.x, sc.test.x);
  EXPECT_EQ(back.test.y, sc.test.y);
  EXPECT_EQ(back.stats.x, sc.stats.x);
  for (std::size_t k = 0; k < sc.clients.size(); ++k) {
    EXPECT_EQ(back.clients[k].train.x, sc.clients[k].train.x);
    EXPECT_EQ(back.clients[k].train.y, sc.clients[k].train.y);
    EXPECT_EQ(back.clients[k].val.y, sc.clients[k].val.y);
  }
  EXPECT_EQ(back.realized.test_prevalence, sc.realized.test_prevalence);
  // Training on the reloaded data reproduces the run.
  EXPECT_EQ(run_experiment(cfg, back).global->params, run_experiment(cfg, sc).global->params);
}

TEST(Suite, EmptyMemberListGivesEmptyTable) {
  const auto s = suite_from_json(Json::parse(R"({"members": []})"));
  const auto t = build_comparison(s, run_suite_members(s));
  EXPECT_TRUE(t.rows.empty());
  const auto csv = comparison_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(Suite, FourMethodTableShape) {
  auto j = Json::parse(R"({"reference": "surgical", "groups": ["all", "shared_by_all", "unique", "client1_local"],
                           "members": [{"method": "surgical"}, {"method": "vanilla_fl"},
                                       {"method": "fl_partial_loss"}, {"method": "centralized"}, {"method": "pfl"}]})");
  j["base"] = Json::parse(kMinimal);
  j["base"].erase("method");
  const auto s = suite_from_json(j);
  const auto outcomes = run_suite_members(s);
  const auto t = build_comparison(s, outcomes);
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_FALSE(t.any_failed);
  EXPECT_EQ(t.rows[0].cells[0].p, "ref");
  EXPECT_EQ(t.rows[0].cells[0].sig, "ref");
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_TRUE(t.rows[i].cells[0].mean.has_value());
    EXPECT_NE(t.rows[i].cells[0].p, "ref");
  }
  // PFL has no global model: every class group is undefined, its own
  // client's classes are not.
  const auto& pfl = t.rows[4];
  EXPECT_FALSE(pfl.cells[0].mean.has_value());
  EXPECT_EQ(pfl.cells[0].p, "NA");
  EXPECT_TRUE(pfl.cells[3].mean.has_value());
  // Rerun with the same seeds gives the identical table.
  EXPECT_EQ(comparison_csv(build_comparison(s, run_suite_members(s))), comparison_csv(t));
}

TEST(Suite, FailedMemberIsMarkedAndOthersContinue) {
  auto j = Json::parse(R"({"members": [{"method": "surgical"}, {"name": "broken", "method": "vanilla_fl", "lr": 1e200},
                                       {"method": "centralized"}]})");
  j["base"] = Json::parse(kMinimal);
  const auto s = suite_from_json(j);
  const auto t = build_comparison(s, run_suite_members(s));
  EXPECT_TRUE(t.any_failed);
  EXPECT_EQ(t.rows[1].status, "failed");
  EXPECT_EQ(t.rows[0].status, "ok");
  EXPECT_EQ(t.rows[2].status, "ok");
  EXPECT_TRUE(t.rows[2].cells[0].mean.has_value());
}

TEST(Suite, IterationPairingUsesSeeds) {
  auto j = Json::parse(R"({"pairing": "iterations", "seeds": [1, 2, 3], "groups": ["all"],
                           "members": [{"method": "surgical"}, {"method": "vanilla_fl"}]})");
  j["base"] = Json::parse(kMinimal);
  const auto s = suite_from_json(j);
  const auto t = build_comparison(s, run_suite_members(s));
  EXPECT_EQ(t.rows[1].runs, 3u);
  EXPECT_TRUE(t.rows[1].cells[0].sd.has_value());
  EXPECT_NE(t.rows[1].cells[0].p, "NA");
}

TEST(Suite, InvalidSpecsAreConfigErrors) {
  EXPECT_THROW(suite_from_json(Json::parse(R"({"members": [{"method": "surgical"}]})")), ConfigError);
  auto j = Json::parse(R"({"reference": "nobody", "members": []})");
  EXPECT_THROW(suite_from_json(j), ConfigError);
  j = Json::parse(R"({"groups": ["rare"], "members": []})");
  EXPECT_THROW(suite_from_json(j), ConfigError);
}

TEST(Cli, RunWritesOutputsAndIsDeterministic) {
  TempDir dir;
  const auto cfg = config_file(dir, "c.json", kMinimal);
  auto r = run_cli("run '" + cfg + "' --out '" + (dir / "a").string() + "' --quiet", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"rounds.csv", "result.json", "checkpoint.txt"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  r = run_cli("run '" + cfg + "' --out '" + (dir / "b").string() + "' --quiet --parallel-clients 2", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rounds = read_text_file(dir / "a" / "rounds.csv");
  EXPECT_EQ(rounds, read_text_file(dir / "b" / "rounds.csv"));
  EXPECT_EQ(read_text_file(dir / "a" / "result.json"), read_text_file(dir / "b" / "result.json"));
  EXPECT_EQ(std::count(rounds.begin(), rounds.end(), '\n'), 4);

  const auto hash = manifest_hash(load_config(cfg));
  std::istringstream lines(rounds);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) EXPECT_EQ(line.rfind(hash + ",", 0), 0u) << line;

  const auto back = parse_checkpoint(read_text_file(dir / "a" / "checkpoint.txt"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].first, "global");
}

TEST(Cli, SeedOverrideChangesRun) {
  TempDir dir;
  const auto cfg = config_file(dir, "c.json", kMinimal);
  ASSERT_EQ(run_cli("run '" + cfg + "' --out '" + (dir / "a").string() + "' --quiet", dir.path()).code, 0);
  ASSERT_EQ(run_cli("--seed 5 run '" + cfg + "' --out '" + (dir / "b").string() + "' --quiet", dir.path()).code, 0);
  ASSERT_EQ(run_cli("run '" + cfg + "' --out '" + (dir / "c").string() + "' --seed 5 --quiet", dir.path()).code, 0);
  EXPECT_NE(read_text_file(dir / "a" / "rounds.csv"), read_text_file(dir / "b" / "rounds.csv"));
  EXPECT_EQ(read_text_file(dir / "b" / "rounds.csv"), read_text_file(dir / "c" / "rounds.csv"));
}

TEST(Cli, EnvironmentOverridesOutputDir) {
  TempDir dir;
  const auto cfg = config_file(dir, "c.json", kMinimal);
  const auto env = std::string(kOutDirEnv) + "='" + (dir / "from_env").string() + "'";
  auto r = run_cli("run '" + cfg + "' --out '" + (dir / "ignored").string() + "' --quiet", dir.path(), env);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "from_env" / "rounds.csv"));
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Cli, InvalidInputExitsTwo) {
  TempDir dir;
  auto j = Json::parse(kMinimal);
  j["scenario"].erase("K");
  const auto cfg = config_file(dir, "noK.json", j.dump());
  auto r = run_cli("run '" + cfg + "' --out '" + (dir / "o").string() + "'", dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("K"), std::string::npos) << r.err;

  EXPECT_EQ(run_cli("run '" + (dir / "missing.json").string() + "' --out o", dir.path()).code, 2);
  EXPECT_EQ(run_cli("run '" + config_file(dir, "bad.json", "{not json") + "' --out o", dir.path()).code, 2);
  EXPECT_EQ(run_cli("ablation sideways --out o", dir.path()).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 2);
  EXPECT_EQ(run_cli("run", dir.path()).code, 2);
}

TEST(Cli, RuntimeFailureExitsOne) {
  TempDir dir;
  auto j = Json::parse(kMinimal);
  j["lr"] = 1e200;
  const auto cfg = config_file(dir, "diverge.json", j.dump());
  auto r = run_cli("run '" + cfg + "' --out '" + (dir / "o").string() + "'", dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("client"), std::string::npos) << r.err;
}

TEST(Cli, SuiteWritesComparison) {
  TempDir dir;
  auto j = Json::parse(R"({"reference": "surgical", "members": [{"method": "surgical"}, {"method": "vanilla_fl"},
                           {"method": "fl_partial_loss"}, {"method": "centralized"}]})");
  j["base"] = Json::parse(kMinimal);
  const auto suite = config_file(dir, "suite.json", j.dump());
  auto r = run_cli("suite '" + suite + "' --out '" + (dir / "s").string() + "' --quiet", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_text_file(dir / "s" / "comparison.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find(",surgical,surgical,ok,1,"), std::string::npos);
  EXPECT_NE(csv.find(",ref,ref"), std::string::npos);

  j["members"].push_back(Json::parse(R"({"name": "broken", "method": "surgical", "lr": 1e200})"));
  const auto bad = config_file(dir, "bad_suite.json", j.dump());
  r = run_cli("suite '" + bad + "' --out '" + (dir / "f").string() + "' --quiet", dir.path());
  EXPECT_EQ(r.code, 1);
  const auto failed = read_text_file(dir / "f" / "comparison.csv");
  EXPECT_NE(failed.find(",broken,surgical,failed,"), std::string::npos);
  EXPECT_EQ(std::count(failed.begin(), failed.end(), '\n'), 6);
}

TEST(Cli, AblationWritesRungsAndSummary) {
  TempDir dir;
  auto r = run_cli("ablation shared_classes --out '" + (dir / "a").string() + "' --epochs 1 --iterations 1 --quiet",
                   dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (int x : {0, 1, 2, 4, 8, 12, 14})
    EXPECT_TRUE(fs::exists(dir / "a" / ("rung_" + std::to_string(x) + ".csv"))) << x;
  const auto summary = read_text_file(dir / "a" / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 1 + 7 * 4);
}

TEST(Cli, DumpDataWritesLoadableDataset) {
  TempDir dir;
  const auto cfg = config_file(dir, "c.json", kNamed);
  auto r = run_cli("dump-data '" + cfg + "' --out '" + (dir / "d").string() + "' --quiet", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sc = load_scenario(dir / "d");
  EXPECT_EQ(sc.test.x, generate_synthetic(load_config(cfg).scenario).test.x);
}
