// chebqr: generate data, train, evaluate, sweep and invert quantile models.
//
// Exit codes: 0 ok, 2 config or usage, 3 data or I/O, 4 numeric or
// convergence, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chebqr/config.hpp"
#include "chebqr/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chebqr;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Config:
    case ErrorKind::InvalidDegree:
    case ErrorKind::InsufficientDegree:
    case ErrorKind::Domain: return 2;
    case ErrorKind::Data:
    case ErrorKind::Io:
    case ErrorKind::Dimension: return 3;
    case ErrorKind::Numeric:
    case ErrorKind::Convergence:
    case ErrorKind::OutOfSupport: return 4;
  }
  return 1;
}

const std::vector<std::string> kAllModels{"ours-q0", "ours-mean", "nam", "iqn", "iqn-p", "iqn-d", "pcdn", "normal"};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
  bool quiet = false;
};

// Flags shared by train and sweep. Only flags actually given become overrides.
struct RunFlags {
  std::optional<std::string> model, data, target, split, normalization, integration, endpoints, activation, preset;
  std::optional<std::size_t> folds, fold, degree, epochs, patience, batch_size, n_tau;
  std::optional<double> lambda, fd_step, monotone_fraction, lr, test_ratio, val_ratio;
  std::vector<std::size_t> hidden;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_model) {
  if (with_model) cmd->add_option("--model,-m", f.model, "Model: " + CLI::detail::join(kAllModels, ", "));
  cmd->add_option("--data", f.data, "'glasses' or a CSV path");
  cmd->add_option("--target", f.target, "CSV target column (default: last column)");
  cmd->add_option("--split", f.split, "auto, glasses or random");
  cmd->add_option("--folds", f.folds, "Number of random splits");
  if (with_model) cmd->add_option("--fold", f.fold, "Split index to train on");
  cmd->add_option("--test-ratio", f.test_ratio, "Test fraction for random splits");
  cmd->add_option("--val-ratio", f.val_ratio, "Validation fraction for random splits");
  cmd->add_option("--normalization", f.normalization, "glasses scaling: max-abs-y, separate or none");
  cmd->add_option("--degree,-d", f.degree, "Chebyshev degree / quadrature order");
  cmd->add_option("--integration", f.integration, "extended or truncate-to-d");
  cmd->add_option("--nam-endpoints", f.endpoints, "halved or as-printed");
  cmd->add_option("--lambda", f.lambda, "Penalty weight for iqn-p and iqn-d");
  cmd->add_option("--fd-step", f.fd_step, "Finite-difference step for iqn-d");
  cmd->add_option("--monotone-fraction", f.monotone_fraction, "Constrained share of pcdn hidden units");
  cmd->add_option("--hidden", f.hidden, "Hidden layer widths, e.g. --hidden 120 60 10")->delimiter(',');
  cmd->add_option("--activation", f.activation, "Hidden activation: relu, softplus or identity");
  cmd->add_option("--preset", f.preset, "Architecture preset when --hidden is absent: uci or glasses");
  cmd->add_option("--epochs", f.epochs, "Maximum epochs");
  cmd->add_option("--patience", f.patience, "Early-stopping patience");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  cmd->add_option("--n-tau", f.n_tau, "Quantile levels sampled per example");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
}

json overrides_from(const Globals& g, const RunFlags& f) {
  json o = json::object();
  auto set = [&](const char* a, const char* b, const auto& v) {
    if (v) (b ? o[a][b] : o[a]) = *v;
  };
  if (g.seed) o["seed"] = *g.seed;
  set("model", "model", f.model);
  set("data", "source", f.data);
  set("data", "target", f.target);
  set("data", "split", f.split);
  set("data", "folds", f.folds);
  set("data", "test_ratio", f.test_ratio);
  set("data", "val_ratio", f.val_ratio);
  set("data", "normalization", f.normalization);
  set("fold", nullptr, f.fold);
  set("preset", nullptr, f.preset);
  set("model", "degree", f.degree);
  set("model", "integration", f.integration);
  set("model", "nam_endpoints", f.endpoints);
  set("model", "penalty_weight", f.lambda);
  set("model", "fd_step", f.fd_step);
  set("model", "monotone_fraction", f.monotone_fraction);
  set("model", "hidden_activation", f.activation);
  if (!f.hidden.empty()) o["model"]["hidden"] = f.hidden;
  set("train", "max_epochs", f.epochs);
  set("train", "patience", f.patience);
  set("train", "batch_size", f.batch_size);
  set("train", "n_tau", f.n_tau);
  set("train", "learning_rate", f.lr);
  return o;
}

json config_file(const Globals& g) { return g.config.empty() ? json(nullptr) : read_json_file(g.config); }

fs::path output_root(const Globals& g) {
  if (!g.out.empty()) return g.out;
  if (const char* env = std::getenv("CHEBQR_OUT"); env && *env) return env;
  return "runs";
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> taus;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      taus.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, "--taus: '" + item + "' is not a number");
    }
  }
  require(!taus.empty(), ErrorKind::Usage, "--taus: empty list");
  for (double t : taus) require(t > 0.0 && t < 1.0, ErrorKind::Usage, "--taus: levels must lie in (0, 1)");
  check_ascending(taus);
  return taus;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-crossing quantile regression with Chebyshev-integrated networks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run config; flags override its fields")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--jobs,-j", g.jobs, "Parallel cells for sweep")->check(CLI::PositiveNumber);
  app.add_option("--out,-o", g.out, "Output directory (default: $CHEBQR_OUT or ./runs)");
  app.add_flag("--quiet,-q", g.quiet, "Do not echo the resolved config");
  app.fallthrough();

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic dataset and its manifest");
  std::string gen_name;
  std::string gen_norm = "max-abs-y";
  gen->add_option("name", gen_name, "Generator name (glasses)")->required();
  gen->add_option("--normalization", gen_norm, "max-abs-y, separate or none");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on one split");
  RunFlags train_flags;
  add_run_flags(train_cmd, train_flags, true);
  bool print_only = false;
  train_cmd->add_flag("--print-config", print_only, "Print the resolved config and exit");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a trained run on its test split");
  std::string eval_run, eval_taus, eval_grid = "980";
  std::optional<double> eval_tol;
  std::optional<std::size_t> eval_bins, eval_loglik_taus;
  eval_cmd->add_option("--run", eval_run, "Run directory holding checkpoint.json")->required();
  eval_cmd->add_option("--grid", eval_grid, "Crossing grid (980)");
  eval_cmd->add_option("--taus", eval_taus, "Comma-separated levels for fan.csv");
  eval_cmd->add_option("--tolerance", eval_tol, "Crossing tolerance");
  eval_cmd->add_option("--bins", eval_bins, "Log-likelihood histogram bins");
  eval_cmd->add_option("--loglik-taus", eval_loglik_taus, "Quantile levels per log-likelihood histogram");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate models across splits");
  RunFlags sweep_flags;
  add_run_flags(sweep_cmd, sweep_flags, false);
  std::vector<std::string> sweep_models = kAllModels;
  bool resume = false;
  sweep_cmd->add_option("--models", sweep_models, "Models to run")->delimiter(',');
  sweep_cmd->add_flag("--resume", resume, "Reuse finished cells whose config is unchanged");

  // invert
  auto* inv_cmd = app.add_subcommand("invert", "Map (x, y) pairs to quantile levels");
  std::string inv_run, inv_input, inv_target;
  double inv_tol = 1e-10;
  std::size_t inv_iter = 50;
  inv_cmd->add_option("--run", inv_run, "Run directory of a Chebyshev model")->required();
  inv_cmd->add_option("--input", inv_input, "CSV with the training features and a target column")->required();
  inv_cmd->add_option("--target", inv_target, "Target column (default: the run's target)");
  inv_cmd->add_option("--tol", inv_tol, "Residual tolerance");
  inv_cmd->add_option("--max-iter", inv_iter, "Iteration cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      require(gen_name == "glasses", ErrorKind::Usage, "unknown generator '" + gen_name + "' (known: glasses)");
      const std::uint64_t seed = g.seed.value_or(0);
      const auto ds = gen_glasses(seed, parse_glasses_normalization(gen_norm));
      const fs::path dir = g.out.empty() ? output_root(g) / "data" : fs::path(g.out);
      std::ostringstream csv;
      write_csv(ds, csv);
      write_file_atomic(dir / "glasses.csv", csv.str());
      const json manifest{{"generator", "glasses"}, {"seed", seed},           {"normalization", gen_norm},
                          {"rows", ds.size()},      {"columns", {"x", "y"}}, {"log", ds.log}};
      write_file_atomic(dir / "glasses.manifest.json", manifest.dump(2) + "\n");
      std::cout << (dir / "glasses.csv").string() << '\n';
      return 0;
    }

    if (*train_cmd) {
      const RunConfig cfg = resolve_config(config_file(g), overrides_from(g, train_flags));
      const json echo = config_to_json(cfg);
      if (!g.quiet || print_only) std::cout << echo.dump(2) << '\n';
      if (print_only) return 0;
      const fs::path dir =
          g.out.empty() ? output_root(g) / (model_name(cfg.model) + "-fold-" + std::to_string(cfg.fold)) : fs::path(g.out);
      const auto outcome = train_to_dir(cfg, dir);
      std::cerr << "trained " << model_name(cfg.model) << ": best epoch " << outcome.history.best_epoch << " of "
                << outcome.history.records.size() - 1 << ", validation loss "
                << format_double(outcome.history.best_val_loss) << "\n"
                << "wrote " << dir.string() << '\n';
      return 0;
    }

    if (*eval_cmd) {
      require(eval_grid == "980", ErrorKind::Usage, "--grid: only 980 is supported");
      EvaluateOptions options;
      if (!eval_taus.empty()) options.fan_taus = parse_taus(eval_taus);
      options.config_path = g.config;
      json o = json::object();
      if (eval_tol) o["eval"]["crossing_tolerance"] = *eval_tol;
      if (eval_bins) o["eval"]["loglik_n_bins"] = *eval_bins;
      if (eval_loglik_taus) o["eval"]["loglik_n_taus"] = *eval_loglik_taus;
      options.overrides = o;
      const fs::path out = g.out.empty() ? fs::path(eval_run) : fs::path(g.out);
      const auto report = evaluate_dir(eval_run, out, options);
      const auto j = report_to_json(report);
      if (!g.quiet) std::cout << j.dump(2) << '\n';
      std::cerr << "wrote " << (out / "report.json").string() << " and " << (out / "fan.csv").string() << '\n';
      return 0;
    }

    if (*sweep_cmd) {
      json base = default_config_json();
      if (auto file = config_file(g); !file.is_null()) base.merge_patch(file);
      base.merge_patch(overrides_from(g, sweep_flags));
      // Resolving once validates shared fields before any cell starts.
      const RunConfig probe = config_from_json(base);
      for (const auto& m : sweep_models) {
        ModelSpec s;
        apply_model_name(s, m);
      }
      SweepOptions options;
      options.models = sweep_models;
      const std::size_t n_folds = resolved_split(probe.data) == "glasses" ? 1 : probe.data.folds;
      for (std::size_t k = 0; k < n_folds; ++k) options.folds.push_back(k);
      options.jobs = g.jobs;
      options.resume = resume;
      const fs::path out = g.out.empty() ? output_root(g) / "sweep" : fs::path(g.out);
      if (!g.quiet) std::cout << config_to_json(probe).dump(2) << '\n';
      const auto cells = run_sweep(base, options, out);
      std::size_t failed = 0;
      for (const auto& c : cells) failed += c.ok ? 0 : 1;
      std::cerr << cells.size() - failed << " of " << cells.size() << " cells completed; wrote "
                << (out / "cells.csv").string() << '\n';
      return failed == 0 ? 0 : 4;
    }

    if (*inv_cmd) {
      const LoadedRun run = load_run(inv_run, g.config);
      const std::string target = inv_target.empty() ? run.config.data.target : inv_target;
      const Dataset input = load_csv(inv_input, target.empty() && run.config.data.source == "glasses" ? "y" : target);
      const auto rows = invert_rows(run, input, inv_tol, inv_iter);
      std::ostringstream csv;
      write_inversion_csv(rows, csv);
      const fs::path out = g.out.empty() ? fs::path(inv_run) / "invert.csv" : fs::path(g.out);
      write_file_atomic(out, csv.str());
      std::size_t bad = 0;
      for (const auto& r : rows) bad += r.status == "ok" ? 0 : 1;
      std::cerr << rows.size() - bad << " of " << rows.size() << " rows inverted; wrote " << out.string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
