#include "ntkprune/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ntkprune {
namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) {
    throw IoError("cannot create directory " + p.string() + ": " +
                  ec.message());
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  return out;
}

// Runs fn(0..n-1) over a fixed-size pool. fn must not throw; cell workers
// capture their own exceptions so one bad cell cannot take down the pool.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
  workers = std::min(workers, n == 0 ? std::size_t{1} : n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

bool cell_needs_prune_data(const ExperimentConfig& cfg, const CellSpec& c) {
  if (c.dense) return false;
  const PruneMethod m = method_from_name(c.method);
  if (method_needs_labels(m)) return true;
  return m == PruneMethod::ntksap &&
         cfg.prune.input_source == InputSource::dataset;
}

// Reshapes (n, features) rows to the architecture's input rank when the
// element counts agree; IDX loads are flat while CNNs want (c, h, w).
Tensor reshape_to_arch(const Tensor& inputs, const Architecture& arch,
                       const std::string& what) {
  Shape want{inputs.shape().at(0)};
  want.insert(want.end(), arch.input_shape.begin(), arch.input_shape.end());
  if (inputs.shape() == want) return inputs;
  if (shape_size(inputs.shape()) != shape_size(want)) {
    throw ConfigError("config: " + what + " samples carry " +
                      std::to_string(shape_size(inputs.shape()) /
                                     std::max<std::size_t>(
                                         1, inputs.shape().at(0))) +
                      " values each but the architecture input " +
                      shape_str(arch.input_shape) + " expects " +
                      std::to_string(shape_size(arch.input_shape)));
  }
  return Tensor(want, inputs.values());
}

void fit_split_to_arch(TrainTestSplit& split, const Architecture& arch) {
  if (split.train.size() > 0) {
    split.train.inputs = reshape_to_arch(split.train.inputs, arch, "train");
  }
  if (split.test.size() > 0) {
    split.test.inputs = reshape_to_arch(split.test.inputs, arch, "test");
  }
}

// "<method>_sp<sparsity>_..." -> (method, sparsity); false when the label
// does not follow the cell naming scheme.
bool parse_label(const std::string& label, std::string& method,
                 double& sparsity) {
  const auto sp = label.find("_sp");
  if (sp == std::string::npos || sp == 0) return false;
  std::string rest = label.substr(sp + 3);
  const auto us = rest.find('_');
  if (us != std::string::npos) rest = rest.substr(0, us);
  try {
    std::size_t pos = 0;
    const double v = std::stod(rest, &pos);
    if (pos != rest.size()) return false;
    sparsity = v;
  } catch (const std::exception&) {
    return false;
  }
  method = label.substr(0, sp);
  return true;
}

// File label: basename minus trailing .csv and .mask extensions.
std::string label_from_path(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const char* ext : {".csv", ".mask"}) {
    const std::size_t len = std::string(ext).size();
    if (name.size() > len && name.compare(name.size() - len, len, ext) == 0) {
      name.erase(name.size() - len);
    }
  }
  return name.empty() ? std::string("mask") : name;
}

json cell_to_json(const CellOutcome& r) {
  json j;
  j["id"] = r.spec.id;
  j["method"] = r.spec.method;
  j["sparsity"] = r.spec.sparsity;
  j["seed"] = r.spec.seed;
  j["rounds"] = r.spec.rounds;
  j["epsilon"] = r.spec.epsilon;
  j["dense"] = r.spec.dense;
  j["ok"] = r.ok;
  j["skipped"] = r.skipped;
  j["error"] = r.error;
  j["final_test_acc"] = r.final_test_acc;
  j["final_train_acc"] = r.final_train_acc;
  j["density"] = r.density;
  j["collapsed"] = r.collapsed;
  j["mask"] = r.mask_path;
  j["trace"] = r.trace_path;
  j["collapse"] = r.collapse_path;
  j["history"] = r.history_path;
  return j;
}

std::optional<CellOutcome> cell_from_json(const fs::path& p,
                                          const CellSpec& spec) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  json j;
  try {
    in >> j;
    CellOutcome r;
    r.spec = spec;
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", std::string());
    r.final_test_acc = j.value("final_test_acc", 0.0);
    r.final_train_acc = j.value("final_train_acc", 0.0);
    r.density = j.value("density", 0.0);
    r.collapsed = j.value("collapsed", false);
    r.mask_path = j.value("mask", std::string());
    r.trace_path = j.value("trace", std::string());
    r.collapse_path = j.value("collapse", std::string());
    r.history_path = j.value("history", std::string());
    return r;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void write_report(const fs::path& out, const std::string& command,
                  const ExperimentConfig& cfg,
                  const std::vector<CellOutcome>& cells,
                  const std::vector<std::string>& files) {
  json rep;
  rep["command"] = command;
  rep["config_hash"] = cfg.hash_hex();
  rep["seed_offset"] = cfg.seed_offset;
  rep["cells"] = json::array();
  for (const auto& c : cells) rep["cells"].push_back(cell_to_json(c));
  rep["files"] = files;
  auto f = open_out(out / "run_report.json");
  f << rep.dump(2) << '\n';
}

void finish_counts(const std::vector<CellOutcome>& cells, RunOutcome& out) {
  for (const auto& c : cells) {
    if (c.skipped) {
      ++out.cells_skipped;
    } else {
      ++out.cells_run;
    }
    if (!c.ok) ++out.cells_failed;
  }
  if (out.cells_failed > 0) out.exit_code = 3;
}

std::string joined_methods(const std::vector<CellOutcome>& cells) {
  std::vector<std::string> seen;
  for (const auto& c : cells) {
    if (std::find(seen.begin(), seen.end(), c.spec.method) == seen.end()) {
      seen.push_back(c.spec.method);
    }
  }
  std::string s;
  for (const auto& m : seen) {
    if (!s.empty()) s += ' ';
    s += m;
  }
  return s;
}

void emit_sweep_plot(const fs::path& out,
                     const std::vector<CellOutcome>& cells) {
  auto f = open_out(out / "plots.gp");
  f << "# gnuplot script; run from this directory\n"
    << "set datafile separator \",\"\n"
    << "set key outside right\n"
    << "set xlabel \"sparsity\"\n"
    << "set ylabel \"final test accuracy\"\n"
    << "set terminal pngcairo size 960,640\n"
    << "set output \"accuracy_vs_sparsity.png\"\n"
    << "methods = \"" << joined_methods(cells) << "\"\n"
    << "plot for [m in methods] \"sweep_results.csv\" every ::1 \\\n"
    << "  using (strcol(1) eq m ? column(2) : NaN):(column(6)) \\\n"
    << "  with points pt 7 ps 1.5 title m\n";
}

void emit_curve_plot(const fs::path& out, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<std::string>& files, int xcol, int ycol,
                     bool logy) {
  auto f = open_out(out / "plots.gp");
  f << "# gnuplot script; run from this directory\n"
    << "set datafile separator \",\"\n"
    << "set key outside right\n"
    << "set xlabel \"" << xlabel << "\"\n"
    << "set ylabel \"" << ylabel << "\"\n";
  if (logy) f << "set logscale y\n";
  f << "set terminal pngcairo size 960,640\n"
    << "set output \"" << title << ".png\"\n"
    << "files = \"";
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (i) f << ' ';
    f << files[i];
  }
  f << "\"\n"
    << "plot for [f in files] f every ::1 using " << xcol << ':' << ycol
    << " with lines title f\n";
}

struct CellContext {
  const ExperimentConfig& cfg;
  const Architecture& arch;
  const Dataset* prune_data = nullptr;  // class-balanced scoring subset
  const TrainTestSplit* split = nullptr;
  fs::path out;
};

// Prune one cell and write its mask/trace/collapse CSVs. Paths recorded in
// the outcome are relative to the run directory.
void prune_into(const CellContext& ctx, const CellSpec& cell,
                MaskedNetwork& net, CellOutcome& r) {
  const PruneConfig pc = ctx.cfg.make_prune_config(
      method_from_name(cell.method), cell.sparsity,
      ctx.cfg.offset_seed(cell.seed), cell.rounds, cell.epsilon);
  const PruneResult pr = prune(net, pc, ctx.prune_data);
  const LayerCollapseReport rep = layer_collapse_report(net);
  r.collapsed = rep.collapsed;
  r.mask_path = "masks/" + cell.id + ".mask.csv";
  r.trace_path = "traces/" + cell.id + ".trace.csv";
  r.collapse_path = "collapse/" + cell.id + ".collapse.csv";
  write_mask_csv(net, (ctx.out / r.mask_path).string());
  write_trace_csv(pr.trace, (ctx.out / r.trace_path).string());
  write_collapse_csv(rep, (ctx.out / r.collapse_path).string());
}

CellOutcome run_prune_cell(const CellContext& ctx, const CellSpec& cell) {
  CellOutcome r;
  r.spec = cell;
  try {
    MaskedNetwork net =
        build_network(ctx.arch, ctx.cfg.offset_seed(cell.seed));
    prune_into(ctx, cell, net, r);
    r.density = net.density();
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

CellOutcome run_sweep_cell(const CellContext& ctx, const CellSpec& cell) {
  CellOutcome r;
  r.spec = cell;
  try {
    MaskedNetwork net =
        build_network(ctx.arch, ctx.cfg.offset_seed(cell.seed));
    if (!cell.dense) prune_into(ctx, cell, net, r);
    if (ctx.cfg.train.train_init == TrainInit::fresh) {
      Rng root(ctx.cfg.offset_seed(cell.seed));
      Rng init = root.fork(streams::train_init);
      net.reinitialize(init);
    }
    const TrainHistory h =
        sgd_train(net, ctx.split->train, ctx.split->test,
                  ctx.cfg.make_train_config(ctx.cfg.offset_seed(cell.seed)));
    r.history_path = "history/" + cell.id + ".history.csv";
    write_history_csv(h, (ctx.out / r.history_path).string());
    r.density = net.density();
    if (!h.epochs.empty()) {
      r.final_test_acc = h.epochs.back().test_acc;
      r.final_train_acc = h.epochs.back().train_acc;
    }
    r.collapsed = r.collapsed || h.collapsed_at_start;
    if (h.aborted) {
      r.error = h.abort_reason;
    } else {
      r.ok = true;
    }
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

void append_files(std::vector<std::string>& files, const CellOutcome& r) {
  for (const std::string* p :
       {&r.mask_path, &r.trace_path, &r.collapse_path, &r.history_path}) {
    if (!p->empty()) files.push_back(*p);
  }
}

void write_sweep_results(const fs::path& out,
                         const std::vector<CellOutcome>& cells) {
  auto f = open_out(out / "sweep_results.csv");
  f << "method,sparsity,seed,rounds,epsilon,final_test_acc,final_train_acc,"
       "density,collapsed\n";
  for (const auto& r : cells) {
    if (!r.ok) continue;
    f << r.spec.method << ',' << fmt17(r.spec.sparsity) << ',' << r.spec.seed
      << ',' << r.spec.rounds << ',' << fmt17(r.spec.epsilon) << ','
      << fmt17(r.final_test_acc) << ',' << fmt17(r.final_train_acc) << ','
      << fmt17(r.density) << ',' << (r.collapsed ? 1 : 0) << '\n';
  }
}

}  // namespace

std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg,
                                      bool with_dense) {
  std::vector<std::size_t> rounds_axis = cfg.sweep.rounds_list;
  const bool rounds_in_id = !rounds_axis.empty();
  if (rounds_axis.empty()) rounds_axis.push_back(cfg.prune.rounds);
  std::vector<double> eps_axis = cfg.sweep.epsilon_list;
  const bool eps_in_id = !eps_axis.empty();
  if (eps_axis.empty()) eps_axis.push_back(cfg.prune.epsilon);

  std::vector<CellSpec> cells;
  if (with_dense && cfg.sweep.include_dense) {
    for (const std::uint64_t seed : cfg.sweep.seeds) {
      CellSpec c;
      c.method = "dense";
      c.dense = true;
      c.seed = seed;
      c.epsilon = cfg.prune.epsilon;
      c.id = "dense_seed" + std::to_string(seed);
      cells.push_back(c);
    }
  }
  for (const std::string& method : cfg.sweep.methods) {
    for (const double sp : cfg.sweep.sparsities) {
      for (const std::uint64_t seed : cfg.sweep.seeds) {
        for (const std::size_t rounds : rounds_axis) {
          for (const double eps : eps_axis) {
            CellSpec c;
            c.method = method;
            c.sparsity = sp;
            c.seed = seed;
            c.rounds = rounds;
            c.epsilon = eps;
            c.id = method + "_sp" + fmt_g(sp) + "_seed" + std::to_string(seed);
            if (rounds_in_id) c.id += "_T" + std::to_string(rounds);
            if (eps_in_id) c.id += "_eps" + fmt_g(eps);
            cells.push_back(c);
          }
        }
      }
    }
  }
  return cells;
}

TrainTestSplit build_data(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.offset_seed(cfg.data.seed);
  switch (cfg.data.source) {
    case DataSource::blobs: {
      const std::size_t dim = cfg.data.dim > 0 ? cfg.data.dim : cfg.arch.input;
      return gen_blobs(cfg.classes(), cfg.data.train_per_class,
                       cfg.data.test_per_class, dim, cfg.data.spread, seed);
    }
    case DataSource::two_moons:
      return gen_two_moons(cfg.data.train_per_class, cfg.data.test_per_class,
                           cfg.data.noise, seed);
    case DataSource::idx: {
      TrainTestSplit split;
      split.train =
          load_idx(cfg.data.images, cfg.data.labels, cfg.classes(), "train");
      if (!cfg.data.test_images.empty()) {
        split.test = load_idx(cfg.data.test_images, cfg.data.test_labels,
                              cfg.classes(), "test");
      } else {
        split.test.inputs = Tensor(Shape{0, 1});
        split.test.classes = cfg.classes();
        split.test.split = "test";
      }
      return split;
    }
  }
  throw ConfigError("config: unknown data source");
}

std::vector<double> load_mask_csv(const std::string& path,
                                  std::size_t expected_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("flat_index,", 0) != 0) {
    throw IoError("mask file " + path + ": missing flat_index header");
  }
  std::vector<double> mask(expected_size, 0.0);
  std::vector<bool> seen(expected_size, false);
  std::size_t count = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 2) {
      throw IoError("mask file " + path + " line " + std::to_string(lineno) +
                    ": expected flat_index,...,active");
    }
    std::size_t idx = 0;
    try {
      idx = std::stoull(fields.front());
    } catch (const std::exception&) {
      throw IoError("mask file " + path + " line " + std::to_string(lineno) +
                    ": bad flat index '" + fields.front() + "'");
    }
    if (idx >= expected_size) {
      throw IoError("mask file " + path + ": flat index " +
                    std::to_string(idx) + " out of range (expected " +
                    std::to_string(expected_size) + " weights)");
    }
    if (seen[idx]) {
      throw IoError("mask file " + path + ": duplicate flat index " +
                    std::to_string(idx));
    }
    const std::string& active = fields.back();
    if (active != "0" && active != "1") {
      throw IoError("mask file " + path + " line " + std::to_string(lineno) +
                    ": active must be 0 or 1, got '" + active + "'");
    }
    seen[idx] = true;
    mask[idx] = active == "1" ? 1.0 : 0.0;
    ++count;
  }
  if (count != expected_size) {
    throw IoError("mask file " + path + ": covers " + std::to_string(count) +
                  " of " + std::to_string(expected_size) + " weights");
  }
  return mask;
}

RunOutcome run_prune(const ExperimentConfig& cfg, const std::string& out_dir,
                     int threads, bool emit_plot) {
  const fs::path out(out_dir);
  ensure_dir(out / "masks");
  ensure_dir(out / "traces");
  ensure_dir(out / "collapse");

  const Architecture arch = cfg.arch.to_architecture();
  const std::vector<CellSpec> cells = enumerate_cells(cfg, false);

  std::optional<Dataset> subset;
  const bool any_data =
      std::any_of(cells.begin(), cells.end(), [&](const CellSpec& c) {
        return cell_needs_prune_data(cfg, c);
      });
  if (any_data) {
    TrainTestSplit split = build_data(cfg);
    fit_split_to_arch(split, arch);
    subset = pruning_subset(split.train, cfg.prune.subset_per_class,
                            cfg.offset_seed(cfg.data.seed));
  }

  CellContext ctx{cfg, arch, subset ? &*subset : nullptr, nullptr, out};
  std::vector<CellOutcome> results(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    results[i] = run_prune_cell(ctx, cells[i]);
  });

  RunOutcome outcome;
  for (const auto& r : results) append_files(outcome.files, r);
  if (emit_plot) {
    std::vector<std::string> traces;
    for (const auto& r : results) {
      if (!r.trace_path.empty()) traces.push_back(r.trace_path);
    }
    emit_curve_plot(out, "active_weights", "round", "active weights", traces,
                    1, 3, false);
    outcome.files.push_back("plots.gp");
  }
  outcome.files.push_back("run_report.json");
  write_report(out, "prune", cfg, results, outcome.files);
  outcome.report_path = (out / "run_report.json").string();
  finish_counts(results, outcome);
  return outcome;
}

RunOutcome run_train(const ExperimentConfig& cfg, const std::string& out_dir,
                     const std::string& mask_path, bool emit_plot) {
  const fs::path out(out_dir);
  ensure_dir(out / "history");

  const Architecture arch = cfg.arch.to_architecture();
  TrainTestSplit split = build_data(cfg);
  fit_split_to_arch(split, arch);

  const bool dense = mask_path == "dense";
  const std::string label = dense ? "dense" : label_from_path(mask_path);

  // An unreadable or ill-formed mask file is a runtime failure of the whole
  // command, not a per-seed cell failure, so load it before the seed loop.
  std::vector<double> mask;
  if (!dense) {
    mask = load_mask_csv(mask_path,
                         build_network(arch, 0).prunable_count());
  }

  std::vector<CellOutcome> results;
  for (const std::uint64_t seed : cfg.sweep.seeds) {
    CellOutcome r;
    r.spec.method = label;
    r.spec.seed = seed;
    r.spec.dense = dense;
    r.spec.id = label + "_seed" + std::to_string(seed);
    try {
      MaskedNetwork net = build_network(arch, cfg.offset_seed(seed));
      if (!dense) apply_mask_vector(net, mask);
      if (cfg.train.train_init == TrainInit::fresh) {
        Rng root(cfg.offset_seed(seed));
        Rng init = root.fork(streams::train_init);
        net.reinitialize(init);
      }
      const TrainHistory h = sgd_train(
          net, split.train, split.test,
          cfg.make_train_config(cfg.offset_seed(seed)));
      r.history_path =
          "history/" + label + "_seed" + std::to_string(seed) +
          ".history.csv";
      write_history_csv(h, (out / r.history_path).string());
      r.density = net.density();
      r.collapsed = h.collapsed_at_start;
      if (!h.epochs.empty()) {
        r.final_test_acc = h.epochs.back().test_acc;
        r.final_train_acc = h.epochs.back().train_acc;
      }
      if (h.aborted) {
        r.error = h.abort_reason;
      } else {
        r.ok = true;
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    results.push_back(r);
  }

  // Summary rows reuse the cell naming scheme when the mask file follows it;
  // otherwise sparsity falls back to the measured 1 - density.
  std::string method = label;
  double sparsity = 0.0;
  const bool parsed = dense || parse_label(label, method, sparsity);
  const std::string summary_name = "train_summary_" + label + ".csv";
  {
    auto f = open_out(out / summary_name);
    f << "method,sparsity,seed,final_test_acc\n";
    for (const auto& r : results) {
      const double sp = parsed ? sparsity : 1.0 - r.density;
      f << method << ',' << fmt17(sp) << ',' << r.spec.seed << ','
        << fmt17(r.final_test_acc) << '\n';
    }
  }

  RunOutcome outcome;
  for (const auto& r : results) append_files(outcome.files, r);
  outcome.files.push_back(summary_name);
  if (emit_plot) {
    std::vector<std::string> histories;
    for (const auto& r : results) {
      if (!r.history_path.empty()) histories.push_back(r.history_path);
    }
    emit_curve_plot(out, "test_accuracy", "epoch", "test accuracy", histories,
                    1, 4, false);
    outcome.files.push_back("plots.gp");
  }
  outcome.files.push_back("run_report.json");
  write_report(out, "train", cfg, results, outcome.files);
  outcome.report_path = (out / "run_report.json").string();
  finish_counts(results, outcome);
  return outcome;
}

RunOutcome run_spectrum(const ExperimentConfig& cfg,
                        const std::string& out_dir,
                        const std::vector<std::string>& mask_paths,
                        bool emit_plot) {
  const fs::path out(out_dir);
  ensure_dir(out / "spectra");

  const Architecture arch = cfg.arch.to_architecture();
  const std::size_t kn = cfg.sweep.spectrum_batch * arch.output_dim();
  if (kn > cfg.sweep.spectrum_max_dim) {
    throw ConfigError(
        "config: spectrum matrix is " + std::to_string(kn) + "x" +
        std::to_string(kn) + " (spectrum_batch * classes) but "
        "spectrum_max_dim is " +
        std::to_string(cfg.sweep.spectrum_max_dim) +
        "; lower [sweep] spectrum_batch");
  }

  Shape xshape{cfg.sweep.spectrum_batch};
  xshape.insert(xshape.end(), arch.input_shape.begin(),
                arch.input_shape.end());
  Rng root(cfg.offset_seed(cfg.sweep.spectrum_seed));
  Rng sr = root.fork(streams::spectrum);
  const Tensor x = gaussian_batch(xshape, sr);

  const std::uint64_t net_seed = cfg.offset_seed(cfg.sweep.seeds.front());

  std::vector<std::string> labels{"dense"};
  for (const auto& p : mask_paths) labels.push_back(label_from_path(p));

  std::vector<CellOutcome> results;
  std::vector<TraceReportRow> trace_rows;
  std::vector<std::string> spectrum_files;
  double dense_nuclear = 0.0;

  auto summary = open_out(out / "spectrum_summary.csv");
  summary << "label,dim,converged,sweeps,nuclear_norm,nuclear_ratio,"
             "condition_number,clamped\n";

  for (std::size_t li = 0; li < labels.size(); ++li) {
    MaskedNetwork net = build_network(arch, net_seed);
    if (li > 0) {
      apply_mask_vector(
          net, load_mask_csv(mask_paths[li - 1], net.prunable_count()));
    }

    const JacobianMatrix j = jacobian(net, x);
    const NTKMatrix theta = fixed_weight_ntk(j);
    const EigenResult eig = eigenspectrum(theta);
    const double nuclear = nuclear_norm(eig.eigenvalues);
    const ConditionNumber cond = condition_number(eig.eigenvalues);
    const double tr = trace_exact(net, x);
    Rng fd_root(net_seed);
    Rng fd = fd_root.fork(streams::trace_fd, li);
    const TraceFdResult fd_res =
        trace_fd(net, x, cfg.prune.epsilon, 64, fd);

    if (li == 0) dense_nuclear = nuclear;
    const double ratio =
        dense_nuclear > 0.0 ? nuclear / dense_nuclear
                            : (nuclear == 0.0 ? 1.0 : 0.0);

    CellOutcome r;
    r.spec.method = labels[li];
    r.spec.id = labels[li];
    r.spec.dense = li == 0;
    r.density = net.density();
    r.ok = true;
    r.mask_path = li == 0 ? std::string() : mask_paths[li - 1];
    const std::string spec_file =
        "spectra/" + labels[li] + ".spectrum.csv";
    write_spectrum_csv(eig.eigenvalues, (out / spec_file).string());
    spectrum_files.push_back(spec_file);
    results.push_back(r);

    trace_rows.push_back(TraceReportRow{labels[li], net.density(), tr,
                                        fd_res.estimate, cond.value});
    summary << labels[li] << ',' << kn << ',' << (eig.converged ? 1 : 0)
            << ',' << eig.sweeps << ',' << fmt17(nuclear) << ','
            << fmt17(ratio) << ',' << fmt17(cond.value) << ','
            << (cond.clamped ? 1 : 0) << '\n';
  }
  summary.close();

  write_trace_report_csv(trace_rows, (out / "trace_report.csv").string());

  RunOutcome outcome;
  outcome.files = spectrum_files;
  outcome.files.push_back("spectrum_summary.csv");
  outcome.files.push_back("trace_report.csv");
  if (emit_plot) {
    emit_curve_plot(out, "spectrum_decay", "index", "eigenvalue",
                    spectrum_files, 1, 2, true);
    outcome.files.push_back("plots.gp");
  }
  outcome.files.push_back("run_report.json");
  write_report(out, "spectrum", cfg, results, outcome.files);
  outcome.report_path = (out / "run_report.json").string();
  finish_counts(results, outcome);
  return outcome;
}

RunOutcome run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                     int threads, bool resume, bool emit_plot) {
  const fs::path out(out_dir);
  ensure_dir(out / "masks");
  ensure_dir(out / "traces");
  ensure_dir(out / "collapse");
  ensure_dir(out / "history");
  ensure_dir(out / "cells");

  const Architecture arch = cfg.arch.to_architecture();
  const std::vector<CellSpec> cells = enumerate_cells(cfg, true);

  TrainTestSplit split = build_data(cfg);
  fit_split_to_arch(split, arch);

  std::optional<Dataset> subset;
  if (std::any_of(cells.begin(), cells.end(), [&](const CellSpec& c) {
        return cell_needs_prune_data(cfg, c);
      })) {
    subset = pruning_subset(split.train, cfg.prune.subset_per_class,
                            cfg.offset_seed(cfg.data.seed));
  }

  // The ledger keys finished cells by config hash and seed offset so a
  // resumed run only trusts results produced by the same experiment.
  const fs::path ledger_path = out / "sweep_cells.done";
  const std::string ledger_key =
      cfg.hash_hex() + " " + std::to_string(cfg.seed_offset);
  std::unordered_set<std::string> done;
  if (resume && fs::exists(ledger_path)) {
    std::ifstream in(ledger_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind(ledger_key + " ", 0) == 0) {
        done.insert(line.substr(ledger_key.size() + 1));
      }
    }
  }

  std::ofstream ledger(ledger_path, resume ? std::ios::app : std::ios::trunc);
  if (!ledger) throw IoError("cannot open " + ledger_path.string());
  std::mutex ledger_mu;

  CellContext ctx{cfg, arch, subset ? &*subset : nullptr, &split, out};
  std::vector<CellOutcome> results(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    const CellSpec& cell = cells[i];
    const fs::path cell_file = out / "cells" / (cell.id + ".json");
    if (done.count(cell.id)) {
      if (auto restored = cell_from_json(cell_file, cell)) {
        restored->skipped = true;
        results[i] = *restored;
        return;
      }
    }
    CellOutcome r = run_sweep_cell(ctx, cell);
    {
      auto f = open_out(cell_file);
      f << cell_to_json(r).dump(2) << '\n';
    }
    if (r.ok) {
      std::lock_guard<std::mutex> lock(ledger_mu);
      ledger << ledger_key << ' ' << cell.id << '\n';
      ledger.flush();
    }
    results[i] = r;
  });
  ledger.close();

  write_sweep_results(out, results);

  RunOutcome outcome;
  for (const auto& r : results) append_files(outcome.files, r);
  outcome.files.push_back("sweep_results.csv");
  outcome.files.push_back("sweep_cells.done");
  if (emit_plot) {
    emit_sweep_plot(out, results);
    outcome.files.push_back("plots.gp");
  }
  outcome.files.push_back("run_report.json");
  write_report(out, "sweep", cfg, results, outcome.files);
  outcome.report_path = (out / "run_report.json").string();
  finish_counts(results, outcome);
  return outcome;
}

}  // namespace ntkprune
