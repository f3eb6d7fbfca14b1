// Command line front end: prune | train | spectrum | sweep over a TOML
// experiment config. Exit codes: 0 ok, 1 config error, 2 runtime error,
// 3 sweep finished with failed cells.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ntkprune/config.hpp"
#include "ntkprune/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int threads = 1;
  bool emit_plot = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_threads) {
  cmd->add_option("-c,--config", args.config_path, "experiment config (TOML)")
      ->required();
  cmd->add_option("-o,--out", args.out_dir,
                  "output directory (default: [out] from the config, else "
                  "'out')");
  if (with_threads) {
    cmd->add_option("-j,--threads", args.threads,
                    "worker threads over grid cells")
        ->check(CLI::PositiveNumber);
  }
  cmd->add_flag("--emit-plotscript", args.emit_plot,
                "write a gnuplot script next to the CSVs");
}

std::string resolve_out(const CommonArgs& args,
                        const ntkprune::ExperimentConfig& cfg) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (!cfg.out.empty()) return cfg.out;
  return "out";
}

void print_outcome(const char* command, const ntkprune::RunOutcome& res) {
  std::printf("%s: %zu cells run, %zu skipped, %zu failed -> %s\n", command,
              res.cells_run, res.cells_skipped, res.cells_failed,
              res.report_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"foresight pruning laboratory"};
  app.require_subcommand(1);

  CommonArgs prune_args, train_args, spectrum_args, sweep_args;
  std::string mask_path = "dense";
  std::vector<std::string> spectrum_masks;
  bool resume = false;

  CLI::App* prune_cmd =
      app.add_subcommand("prune", "score and prune each grid cell");
  add_common(prune_cmd, prune_args, true);

  CLI::App* train_cmd =
      app.add_subcommand("train", "train under a mask file per seed");
  add_common(train_cmd, train_args, false);
  train_cmd->add_option("-m,--mask", mask_path,
                        "mask CSV, or 'dense' for all ones");

  CLI::App* spectrum_cmd = app.add_subcommand(
      "spectrum", "fixed-weight kernel spectrum for dense plus each mask");
  add_common(spectrum_cmd, spectrum_args, false);
  spectrum_cmd->add_option("-m,--mask", spectrum_masks,
                           "mask CSVs to compare against dense");

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "prune and train the whole grid");
  add_common(sweep_cmd, sweep_args, true);
  sweep_cmd->add_flag("--resume", resume,
                      "skip cells recorded in sweep_cells.done");

  CLI11_PARSE(app, argc, argv);

  try {
    ntkprune::RunOutcome res;
    if (prune_cmd->parsed()) {
      const auto cfg =
          ntkprune::load_experiment_config(prune_args.config_path);
      res = ntkprune::run_prune(cfg, resolve_out(prune_args, cfg),
                                prune_args.threads, prune_args.emit_plot);
      print_outcome("prune", res);
    } else if (train_cmd->parsed()) {
      const auto cfg =
          ntkprune::load_experiment_config(train_args.config_path);
      res = ntkprune::run_train(cfg, resolve_out(train_args, cfg), mask_path,
                                train_args.emit_plot);
      print_outcome("train", res);
    } else if (spectrum_cmd->parsed()) {
      const auto cfg =
          ntkprune::load_experiment_config(spectrum_args.config_path);
      res = ntkprune::run_spectrum(cfg, resolve_out(spectrum_args, cfg),
                                   spectrum_masks, spectrum_args.emit_plot);
      print_outcome("spectrum", res);
    } else {
      const auto cfg =
          ntkprune::load_experiment_config(sweep_args.config_path);
      res = ntkprune::run_sweep(cfg, resolve_out(sweep_args, cfg),
                                sweep_args.threads, resume,
                                sweep_args.emit_plot);
      print_outcome("sweep", res);
    }
    return res.exit_code;
  } catch (const ntkprune::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
