// bbn_lab: config-driven runner for the long-tailed experiments.
//
//   bbn_lab <command> [variant] --config exp.ini [--seed N] [--seeds K] [--out DIR]
//   bbn_lab export-tables --runs ID[,ID...] [--runs-dir DIR] --out DIR

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bbn/runner.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kNumeric = 3, kFailure = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilateral-branch long-tailed classification lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t seeds = 0;
  std::string out_dir = "runs";
  std::string variant;
  bool seed_given = false;

  std::vector<CLI::App*> experiment_cmds;
  for (const std::string& name : bbn::command_names()) {
    if (name == "export-tables") continue;
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "first run seed (default: [run] seed)")->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--seeds", seeds, "number of consecutive seeds (default: [run] seeds)");
    sub->add_option("--out", out_dir, "root directory for run directories");
    if (name == "train-manner") sub->add_option("manner", variant, "CE, RW or RS (default: [train] manner)");
    if (name == "two-stage") sub->add_option("rebalance", variant, "drw or drs")->required();
    experiment_cmds.push_back(sub);
  }

  std::vector<std::string> run_ids;
  std::string runs_dir = "runs";
  std::string tables_out;
  CLI::App* export_cmd = app.add_subcommand("export-tables", "collect result tables from finished runs");
  export_cmd->add_option("--runs", run_ids, "run ids")->delimiter(',')->required();
  export_cmd->add_option("--runs-dir", runs_dir, "directory holding the run directories");
  export_cmd->add_option("--out", tables_out, "output directory for table CSVs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (export_cmd->parsed()) {
      for (const auto& p : bbn::export_tables(runs_dir, run_ids, tables_out)) std::cout << p.string() << "\n";
      return kOk;
    }
    for (CLI::App* sub : experiment_cmds) {
      if (!sub->parsed()) continue;
      const bbn::ExperimentConfig cfg = bbn::load_config(config_path);
      const std::uint64_t first = seed_given ? seed : cfg.run.seed;
      const std::size_t count = seeds ? seeds : cfg.run.seeds;
      const auto outcome = bbn::run_command(sub->get_name(), variant, cfg, bbn::seed_list(first, count), out_dir);
      std::cout << outcome.record.run_id << "\n";
      for (const auto& row : outcome.record.rows) std::cerr << row.label << "\t" << row.value << "\n";
      return kOk;
    }
  } catch (const bbn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const bbn::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << " (partial metrics kept)\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
