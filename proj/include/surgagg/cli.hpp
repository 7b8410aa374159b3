#pragma once

// Command implementations behind the surgagg executable. Each returns the
// process exit status: 0 success, 1 runtime failure, 2 invalid input.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "surgagg/config.hpp"
#include "surgagg/report.hpp"
#include "surgagg/suite.hpp"

namespace surgagg {

inline constexpr const char* kOutDirEnv = "SURGAGG_OUT_DIR";

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::size_t parallel_clients = 1;
  bool quiet = false;
};

/// The environment variable, when set and non-empty, wins over --out.
inline fs::path resolve_out_dir(const std::string& cli_out) {
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path(cli_out);
}

namespace detail {

inline std::function<void(const std::string&)> logger(const CommonOptions& o) {
  if (o.quiet) return {};
  return [](const std::string& s) { std::cerr << s << "\n"; };
}

template <class F>
int guarded(const char* cmd, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << cmd << ": invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << cmd << ": failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace detail

inline int cmd_run(const std::string& config_path, const std::string& out, const CommonOptions& opt = {}) {
  ExperimentConfig cfg;
  const int parsed = detail::guarded("run", [&] {
    cfg = load_config(config_path);
    if (opt.seed) cfg.set_all_seeds(*opt.seed);
    cfg.validate();
    return 0;
  });
  if (parsed != 0) return parsed;

  return detail::guarded("run", [&] {
    const fs::path dir = resolve_out_dir(out);
    fs::create_directories(dir);
    const std::string hash = manifest_hash(cfg);
    const Scenario sc = generate_synthetic(cfg.scenario);
    RunOptions ro;
    ro.parallel_clients = opt.parallel_clients;
    if (!opt.quiet) {
      ro.observer = [&](const RoundSnapshot& s) {
        if (s.round % 10 == 0) std::cerr << "run: round " << s.round << "\n";
      };
    }
    const auto res = run_experiment(cfg, sc, ro);

    Json outputs = {{"rounds", "rounds.csv"}, {"result", "result.json"}, {"checkpoint", "checkpoint.txt"},
                    {"timing", "timing.csv"}};
    write_text_file(dir / "rounds.csv", rounds_csv(res, hash));
    write_text_file(dir / "timing.csv", timing_csv(res, hash));
    write_text_file(dir / "checkpoint.txt", checkpoint_text(checkpoint_models(res)));
    Json result;
    result["manifest"] = manifest_json(cfg, sc, outputs);
    result["method"] = std::string(to_string(res.method));
    result["rounds"] = res.reports.size();
    result["best_round"] = res.best_round;
    result["epochs_per_client"] = res.epochs_per_client;
    result["evaluation"] = evaluation_json(res, sc);
    write_text_file(dir / "result.json", result.dump(2) + "\n");
    if (!opt.quiet) std::cerr << "run: wrote " << dir.string() << "\n";
    return 0;
  });
}

inline int cmd_suite(const std::string& suite_path, const std::string& out, const CommonOptions& opt = {}) {
  SuiteSpec spec;
  const int parsed = detail::guarded("suite", [&] {
    spec = suite_from_json(read_json_file(suite_path), fs::path(suite_path).parent_path());
    if (opt.seed) spec.seeds = {*opt.seed};
    return 0;
  });
  if (parsed != 0) return parsed;

  return detail::guarded("suite", [&] {
    const fs::path dir = resolve_out_dir(out);
    fs::create_directories(dir);
    SuiteOptions so;
    so.run.parallel_clients = opt.parallel_clients;
    so.log = detail::logger(opt);
    const auto outcomes = run_suite_members(spec, so);
    const auto table = build_comparison(spec, outcomes);
    write_text_file(dir / "comparison.csv", comparison_csv(table));
    write_text_file(dir / "per_class.csv", per_class_csv(spec, outcomes, table.hash));
    Json m;
    m["manifest_hash"] = table.hash;
    m["code_version"] = kCodeVersion;
    m["suite"] = suite_to_json(spec);
    Json failures = Json::object();
    for (const auto& o : outcomes)
      if (!o.error.empty()) failures[o.name] = o.error;
    m["failures"] = failures;
    write_text_file(dir / "suite_manifest.json", m.dump(2) + "\n");
    return table.any_failed ? 1 : 0;
  });
}

struct AblationCliOptions {
  std::size_t iterations = 3;
  std::optional<std::size_t> epochs;
  std::optional<std::string> base_config;
};

inline int cmd_ablation(const std::string& kind_name, const std::string& out, const CommonOptions& opt = {},
                        const AblationCliOptions& aopt = {}) {
  AblationKind kind{};
  AblationOptions ao;
  const int parsed = detail::guarded("ablation", [&] {
    kind = ablation_kind_from_string(kind_name);
    if (aopt.base_config) ao.base = load_config(*aopt.base_config);
    if (aopt.epochs) ao.base.T = *aopt.epochs;
    if (aopt.iterations == 0) throw ConfigError("iterations must be >= 1");
    ao.iterations = aopt.iterations;
    ao.seed = opt.seed.value_or(0);
    ao.base.method = Method::surgical;
    ao.base.validate();
    return 0;
  });
  if (parsed != 0) return parsed;

  return detail::guarded("ablation", [&] {
    const fs::path dir = resolve_out_dir(out);
    fs::create_directories(dir);
    ao.run.parallel_clients = opt.parallel_clients;
    ao.log = detail::logger(opt);
    const auto res = run_ablation(kind, ao);
    for (auto x : res.xs) write_text_file(dir / ("rung_" + std::to_string(x) + ".csv"), ablation_rung_csv(res, x));
    write_text_file(dir / "summary.csv", ablation_summary_csv(res));
    Json m;
    m["manifest_hash"] = res.hash;
    m["code_version"] = kCodeVersion;
    m["kind"] = to_string(kind);
    m["seed"] = ao.seed;
    m["iterations"] = ao.iterations;
    m["base"] = config_to_json(ao.base);
    write_text_file(dir / "ablation_manifest.json", m.dump(2) + "\n");
    return res.any_failed ? 1 : 0;
  });
}

inline int cmd_dump_data(const std::string& config_path, const std::string& out, const CommonOptions& opt = {}) {
  return detail::guarded("dump-data", [&] {
    ExperimentConfig cfg = load_config(config_path);
    if (opt.seed) cfg.set_all_seeds(*opt.seed);
    dump_scenario(generate_synthetic(cfg.scenario), resolve_out_dir(out));
    return 0;
  });
}

}  // namespace surgagg
