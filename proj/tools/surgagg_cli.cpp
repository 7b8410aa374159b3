#include <CLI11.hpp>

#include "surgagg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-label training simulator with surgical aggregation"};
  app.require_subcommand(1);
  // Global options are accepted after the subcommand too.
  app.fallthrough();

  surgagg::CommonOptions common;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override every seed (data, init, shuffle)");
  app.add_option("--parallel-clients", common.parallel_clients, "Clients trained concurrently within a round")
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", common.quiet, "No progress output");
  std::string out;
  const std::string out_help = std::string("Output directory (") + surgagg::kOutDirEnv + " overrides)";

  std::string config;
  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, out_help)->required();

  std::string suite_file;
  auto* suite = app.add_subcommand("suite", "Run a suite and write comparison.csv");
  suite->add_option("file", suite_file, "Suite file (JSON)")->required();
  suite->add_option("--out", out, out_help)->required();

  std::string kind;
  surgagg::AblationCliOptions aopt;
  std::size_t epochs = 0;
  std::string base;
  auto* abl = app.add_subcommand("ablation", "Run a scenario ladder");
  abl->add_option("kind", kind, "clients or shared_classes")->required();
  abl->add_option("--out", out, out_help)->required();
  abl->add_option("--iterations", aopt.iterations, "Seeds per rung (seed, seed+1, ...)");
  auto* epochs_opt = abl->add_option("--epochs", epochs, "Total epochs T per run");
  auto* base_opt = abl->add_option("--base", base, "Config supplying training settings");

  auto* dump = app.add_subcommand("dump-data", "Write a config's generated dataset as CSV");
  dump->add_option("config", config, "Experiment config (JSON)")->required();
  dump->add_option("--out", out, out_help)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) common.seed = seed;
  if (*epochs_opt) aopt.epochs = epochs;
  if (*base_opt) aopt.base_config = base;

  if (*run) return surgagg::cmd_run(config, out, common);
  if (*suite) return surgagg::cmd_suite(suite_file, out, common);
  if (*abl) return surgagg::cmd_ablation(kind, out, common, aopt);
  if (*dump) return surgagg::cmd_dump_data(config, out, common);
  return 2;
}
