#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ntkprune/config.hpp"
#include "ntkprune/data.hpp"
#include "ntkprune/ntk.hpp"
#include "ntkprune/prune.hpp"
#include "ntkprune/train.hpp"

namespace ntkprune {

// One grid point of the experiment: method x sparsity x seed, plus the
// optional rounds/epsilon ablation axes. `dense` cells skip pruning.
struct CellSpec {
  std::string method;
  double sparsity = 0.0;
  std::uint64_t seed = 0;
  std::size_t rounds = 1;
  double epsilon = 1e-4;
  bool dense = false;
  std::string id;
};

std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg,
                                      bool with_dense);

struct CellOutcome {
  CellSpec spec;
  bool ok = false;
  bool skipped = false;  // resumed from a previous run
  std::string error;
  double final_test_acc = 0.0;
  double final_train_acc = 0.0;
  double density = 0.0;
  bool collapsed = false;
  std::string mask_path, trace_path, collapse_path, history_path;
};

struct RunOutcome {
  int exit_code = 0;
  std::string report_path;
  std::size_t cells_run = 0;
  std::size_t cells_skipped = 0;
  std::size_t cells_failed = 0;
  std::vector<std::string> files;
};

TrainTestSplit build_data(const ExperimentConfig& cfg);

// Scores and prunes every (method, sparsity, seed[, T, eps]) cell; emits
// mask, round-trace and collapse CSVs plus run_report.json under out_dir.
RunOutcome run_prune(const ExperimentConfig& cfg, const std::string& out_dir,
                     int threads = 1, bool emit_plot = false);

// Trains the architecture under the mask file ("dense" = all ones) once per
// seed; emits history CSVs and a summary CSV.
RunOutcome run_train(const ExperimentConfig& cfg, const std::string& out_dir,
                     const std::string& mask_path, bool emit_plot = false);

// Fixed-weight NTK spectrum for the dense reference plus each mask file;
// emits per-mask eigenvalue CSVs, a trace report and a summary.
RunOutcome run_spectrum(const ExperimentConfig& cfg,
                        const std::string& out_dir,
                        const std::vector<std::string>& mask_paths,
                        bool emit_plot = false);

// prune + train per cell with a worker pool; per-cell results land in
// cells/<id>.json, completed ids in sweep_cells.done (keyed by config hash),
// and the aggregate in sweep_results.csv. --resume skips completed cells.
// Exit code 3 when some cells failed but the sweep finished.
RunOutcome run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                     int threads = 1, bool resume = false,
                     bool emit_plot = false);

// Flat mask vector from a mask CSV (schema flat_index,layer,position,active).
std::vector<double> load_mask_csv(const std::string& path,
                                  std::size_t expected_size);

}  // namespace ntkprune
