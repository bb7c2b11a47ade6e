#pragma once

// Run directories: a resolved config.json, checkpoint.json and history.csv
// written by training, plus report.json and fan.csv written by evaluation.
// Artifacts hold no timestamps, so reruns from the same config are bitwise
// identical; wall-clock details go to run.log only.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "chebqr/config.hpp"
#include "chebqr/data.hpp"
#include "chebqr/evaluation.hpp"
#include "chebqr/models.hpp"

namespace chebqr {

namespace fs = std::filesystem;

/// Writes through a temporary sibling and renames, so an interrupted run never
/// leaves a truncated artifact behind.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

[[nodiscard]] inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void append_log(const fs::path& path, const std::string& line) {
  static std::mutex mutex;
  const std::lock_guard lock(mutex);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  out << stamp << ' ' << line << '\n';
}

[[nodiscard]] inline nlohmann::json standardizer_to_json(const Standardizer& s) {
  return {{"feature_mean", s.feature_mean},
          {"feature_std", s.feature_std},
          {"target_mean", s.target_mean},
          {"target_std", s.target_std}};
}

[[nodiscard]] inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  try {
    Standardizer s;
    s.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    s.feature_std = j.at("feature_std").get<std::vector<double>>();
    s.target_mean = j.at("target_mean");
    s.target_std = j.at("target_std");
    require(s.feature_mean.size() == s.feature_std.size(), ErrorKind::Data, "standardizer sizes differ");
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed standardizer: ") + e.what());
  }
}

/// The part of a resolved config that determines the trained weights.
[[nodiscard]] inline nlohmann::json training_identity(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("eval");
  return j;
}

inline void write_history_csv(const TrainingHistory& h, std::ostream& out) {
  out << "epoch,train_loss,val_loss,val_pinball_median\n";
  for (const auto& r : h.records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.val_pinball_median) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
  QuantileModel model;
  TrainingHistory history;
  PreparedData data;
};

[[nodiscard]] inline TrainOutcome run_training(const RunConfig& c,
                                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  PreparedData data = prepare_data(c);
  ModelSpec spec = c.model;
  spec.input_dim = data.dataset.dim();
  QuantileModel model = QuantileModel::create(spec, c.seed);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  auto history = train(model, data.fold.x_train, data.fold.y_train, data.fold.x_val, data.fold.y_val, tc, on_epoch);
  return {std::move(model), std::move(history), std::move(data)};
}

[[nodiscard]] inline nlohmann::json checkpoint_json(const TrainOutcome& t, const RunConfig& c) {
  auto j = model_to_json(t.model);
  j["run_config"] = training_identity(c);
  j["standardizer"] = standardizer_to_json(t.data.fold.stats);
  j["best_epoch"] = t.history.best_epoch;
  j["best_val_loss"] = t.history.best_val_loss;
  j["epochs_run"] = t.history.records.size() - 1;
  j["stopped_early"] = t.history.stopped_early;
  return j;
}

/// Trains and writes config.json, checkpoint.json and history.csv into `dir`.
inline TrainOutcome train_to_dir(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  const auto started = std::chrono::steady_clock::now();
  append_log(dir / "run.log", "train start model=" + model_name(c.model) + " fold=" + std::to_string(c.fold));
  auto outcome = run_training(c);
  write_file_atomic(dir / "config.json", config_to_json(c).dump(2) + "\n");
  std::ostringstream hist;
  write_history_csv(outcome.history, hist);
  write_file_atomic(dir / "history.csv", hist.str());
  write_file_atomic(dir / "checkpoint.json", checkpoint_json(outcome, c).dump(2) + "\n");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  append_log(dir / "run.log", "train done best_epoch=" + std::to_string(outcome.history.best_epoch) +
                                  " epochs=" + std::to_string(outcome.history.records.size() - 1) +
                                  " seconds=" + format_double(secs));
  return outcome;
}

// ---------------------------------------------------------------------------
// Loading a run

struct LoadedRun {
  RunConfig config;
  QuantileModel model;
  Standardizer stats;
};

/// First JSON pointer at which two documents differ, or "" when equal.
[[nodiscard]] inline std::string first_difference(const nlohmann::json& a, const nlohmann::json& b) {
  const auto patch = nlohmann::json::diff(a, b);
  if (patch.empty()) return {};
  return patch[0].at("path").get<std::string>();
}

/// Loads `config_path` (default dir/config.json) and dir/checkpoint.json. A
/// `overrides` is merged last. A
/// checkpoint trained under a different config is rejected as a data error
/// naming the first differing field.
[[nodiscard]] inline LoadedRun load_run(const fs::path& dir, const fs::path& config_path = {},
                                        const nlohmann::json& overrides = nullptr) {
  const fs::path cfg = config_path.empty() ? dir / "config.json" : config_path;
  require(fs::exists(dir / "checkpoint.json"), ErrorKind::Io, "no checkpoint.json in '" + dir.string() + "'");
  const RunConfig config = resolve_config(read_json_file(cfg.string()), overrides);
  const auto ckpt = read_json_file((dir / "checkpoint.json").string());
  require(ckpt.contains("run_config") && ckpt.contains("standardizer"), ErrorKind::Data,
          "checkpoint.json lacks run_config or standardizer");
  const auto where = first_difference(ckpt["run_config"], training_identity(config));
  require(where.empty(), ErrorKind::Data,
          "checkpoint does not match config '" + cfg.string() + "' (first difference at " + where + ")");
  QuantileModel model = model_from_json(ckpt);
  return {config, std::move(model), standardizer_from_json(ckpt["standardizer"])};
}

// ---------------------------------------------------------------------------
// Evaluation

/// Writes the fan chart table: one row per test point with the features and
/// target in original units followed by one column per requested quantile.
inline void write_fan_csv(const QuantileModel& model, const PreparedData& data, std::span<const double> taus,
                          std::ostream& out) {
  check_ascending(taus);
  out << "row";
  for (const auto& name : data.dataset.feature_names) out << ',' << name;
  out << ",y";
  for (double t : taus) out << ",q_" << format_double(t);
  out << '\n';
  const Matrix q = model.predict(data.fold.x_test, taus);
  const auto& stats = data.fold.stats;
  for (std::size_t i = 0; i < data.fold.x_test.rows(); ++i) {
    out << i;
    for (std::size_t c = 0; c < data.fold.x_test.cols(); ++c) {
      out << ',' << format_double(data.fold.x_test(i, c) * stats.feature_std[c] + stats.feature_mean[c]);
    }
    out << ',' << format_double(stats.inverse_target(data.fold.y_test[i]));
    for (std::size_t j = 0; j < taus.size(); ++j) out << ',' << format_double(stats.inverse_target(q(i, j)));
    out << '\n';
  }
}

struct EvaluateOptions {
  std::vector<double> fan_taus = decile_taus();
  /// Config to evaluate under; empty means the run's own config.json.
  fs::path config_path;
  /// Merged over the config, typically eval settings only.
  nlohmann::json overrides = nullptr;
};

/// Evaluates the run in `dir` on its test split and writes report.json and
/// fan.csv into `out_dir`.
inline EvalReport evaluate_dir(const fs::path& dir, const fs::path& out_dir, const EvaluateOptions& options = {}) {
  const LoadedRun run = load_run(dir, options.config_path, options.overrides);
  const PreparedData data = prepare_data(run.config);
  require(data.fold.stats.feature_mean == run.stats.feature_mean && data.fold.stats.feature_std == run.stats.feature_std &&
              data.fold.stats.target_mean == run.stats.target_mean && data.fold.stats.target_std == run.stats.target_std,
          ErrorKind::Data, "dataset no longer matches the checkpoint's training statistics");
  require(data.dataset.dim() == run.model.spec().input_dim, ErrorKind::Data,
          "dataset feature count differs from the checkpoint");
  const auto report = evaluate_model(run.model, data.fold, run.config.fold, run.config.eval, config_to_json(run.config));
  write_file_atomic(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
  std::ostringstream fan;
  write_fan_csv(run.model, data, options.fan_taus, fan);
  write_file_atomic(out_dir / "fan.csv", fan.str());
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
  std::vector<std::string> models;
  std::vector<std::size_t> folds;
  std::size_t jobs = 1;
  bool resume = false;
};

[[nodiscard]] inline CellResult cell_from_report(const nlohmann::json& r) {
  CellResult c;
  c.model = r.at("model");
  c.fold = r.at("fold");
  c.ok = true;
  c.crossing_count_grid = r.at("crossing_count_grid");
  if (!r.at("crossing_count_roots").is_null()) c.crossing_count_roots = r.at("crossing_count_roots").get<std::size_t>();
  c.loglik_sum = r.at("loglik_sum");
  return c;
}

/// Trains and evaluates every (model, fold) cell of `base` (a merged config
/// document) under out/<model>/fold-<k>, then writes cells.csv, crossings.csv
/// and loglik.csv into `out`. With `resume`, cells whose report.json was
/// produced under the same config are read back instead of retrained. A failed
/// cell is recorded and the sweep continues.
inline std::vector<CellResult> run_sweep(const nlohmann::json& base, const SweepOptions& options, const fs::path& out) {
  struct Cell {
    std::string model;
    std::size_t fold;
  };
  std::vector<Cell> cells;
  for (const auto& m : options.models) {
    for (auto k : options.folds) cells.push_back({m, k});
  }
  // Resolve every cell up front so config errors surface before any training.
  std::vector<RunConfig> configs;
  for (const auto& cell : cells) {
    nlohmann::json j = base;
    j["model"]["model"] = cell.model;
    j["fold"] = cell.fold;
    configs.push_back(config_from_json(j));
  }

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  const fs::path log = out / "sweep.log";
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& cfg = configs[i];
      const fs::path dir = out / cells[i].model / ("fold-" + std::to_string(cells[i].fold));
      CellResult& res = results[i];
      res.model = cells[i].model;
      res.fold = cells[i].fold;
      try {
        if (options.resume && fs::exists(dir / "report.json") && fs::exists(dir / "config.json")) {
          const auto done = read_json_file((dir / "config.json").string());
          const auto report = read_json_file((dir / "report.json").string());
          if (done == config_to_json(cfg) && report.value("config", nlohmann::json{}) == config_to_json(cfg)) {
            res = cell_from_report(report);
            append_log(log, "resume " + res.model + " fold=" + std::to_string(res.fold));
            continue;
          }
        }
        append_log(log, "start " + res.model + " fold=" + std::to_string(res.fold));
        (void)train_to_dir(cfg, dir);
        const auto report = evaluate_dir(dir, dir);
        res = cell_from_report(report_to_json(report));
        append_log(log, "done " + res.model + " fold=" + std::to_string(res.fold) +
                            " crossings=" + std::to_string(res.crossing_count_grid) +
                            " loglik=" + format_double(res.loglik_sum));
      } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
        append_log(log, "failed " + res.model + " fold=" + std::to_string(res.fold) + ": " + res.error);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  std::ostringstream cells_csv, crossings, loglik;
  write_cells_csv(results, cells_csv);
  const auto agg = aggregate(results);
  write_crossing_table(agg, crossings);
  write_loglik_table(agg, loglik);
  write_file_atomic(out / "cells.csv", cells_csv.str());
  write_file_atomic(out / "crossings.csv", crossings.str());
  write_file_atomic(out / "loglik.csv", loglik.str());
  return results;
}

// ---------------------------------------------------------------------------
// Inversion

struct InversionRow {
  std::size_t row = 0;
  double y = 0.0;
  std::string status;
  InversionResult result;
};

/// Maps each (x, y) of `input` (original units, columns as in training) to its
/// quantile level under a trained Chebyshev model.
[[nodiscard]] inline std::vector<InversionRow> invert_rows(const LoadedRun& run, const Dataset& input, double tol,
                                                           std::size_t max_iter) {
  require(run.model.family() == Family::ChebQR, ErrorKind::Usage,
          "invert needs a Chebyshev model (ours-q0 or ours-mean), got " + model_name(run.model.spec()));
  require(input.dim() == run.stats.feature_mean.size(), ErrorKind::Data,
          "input has " + std::to_string(input.dim()) + " features, model expects " +
              std::to_string(run.stats.feature_mean.size()));
  const Matrix x = run.stats.transform(input.features);
  std::vector<InversionRow> rows;
  for (std::size_t i = 0; i < input.size(); ++i) {
    InversionRow r;
    r.row = i;
    r.y = input.targets[i];
    try {
      r.result = invert(run.model, x.row(i), run.stats.transform_target(r.y), tol, max_iter);
      r.status = "ok";
    } catch (const OutOfSupportError&) {
      r.status = "out-of-support";
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Convergence) throw;
      r.status = "no-convergence";
    }
    rows.push_back(r);
  }
  return rows;
}

inline void write_inversion_csv(std::span<const InversionRow> rows, std::ostream& out) {
  out << "row,y,tau,residual,iterations,status\n";
  for (const auto& r : rows) {
    out << r.row << ',' << format_double(r.y) << ',';
    if (r.status == "ok") {
      out << format_double(r.result.tau) << ',' << format_double(r.result.residual) << ',' << r.result.iterations;
    } else {
      out << ",,";
    }
    out << ',' << r.status << '\n';
  }
}

}  // namespace chebqr
