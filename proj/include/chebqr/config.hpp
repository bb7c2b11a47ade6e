#pragma once

// Run configuration: everything needed to reproduce one (model, dataset, fold)
// training run. Resolution order is defaults, then a JSON config file, then
// command-line overrides; the resolved document is what gets echoed.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chebqr/data.hpp"
#include "chebqr/error.hpp"
#include "chebqr/evaluation.hpp"
#include "chebqr/models.hpp"

namespace chebqr {

struct DataConfig {
  /// "glasses" for the built-in generator, otherwise a CSV path.
  std::string source = "glasses";
  /// CSV target column; empty selects the last column.
  std::string target;
  /// "glasses" (40/10/50 single split) or "random" (repeated shuffles).
  std::string split = "auto";
  std::size_t folds = 1;
  double test_ratio = 0.1;
  double val_ratio = 0.1;
  std::string normalization = "max-abs-y";
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  /// Architecture preset used when model.hidden is not given: "uci" or "glasses".
  std::string preset = "auto";
  DataConfig data;
  std::size_t fold = 0;
  TrainConfig train;
  EvalConfig eval;
};

[[nodiscard]] inline std::string resolved_split(const DataConfig& d) {
  if (d.split != "auto") return d.split;
  return d.source == "glasses" ? "glasses" : "random";
}

[[nodiscard]] inline std::string resolved_preset(const RunConfig& c) {
  if (c.preset != "auto") return c.preset;
  return c.data.source == "glasses" ? "glasses" : "uci";
}

/// Hidden widths for a preset: the glasses network everywhere, or for tabular
/// data a single 200-wide layer split into two 100-wide layers when the model
/// has a second (constant) sub-network.
[[nodiscard]] inline std::vector<std::size_t> preset_hidden(const std::string& preset, Family family) {
  if (preset == "glasses") return {120, 60, 10};
  if (preset == "uci") return has_constant_network(family) ? std::vector<std::size_t>{100} : std::vector<std::size_t>{200};
  fail(ErrorKind::Config, "field 'preset': unknown preset '" + preset + "' (uci, glasses)");
}

// ---------------------------------------------------------------------------
// JSON

[[nodiscard]] inline nlohmann::json default_config_json() {
  RunConfig c;
  nlohmann::json model = spec_to_json(c.model);
  model["hidden"] = nullptr;
  model.erase("input_dim");
  return {
      {"format", "chebqr-run-config"},
      {"version", 1},
      {"seed", c.seed},
      {"preset", c.preset},
      {"model", model},
      {"data",
       {{"source", c.data.source},
        {"target", c.data.target},
        {"split", c.data.split},
        {"folds", c.data.folds},
        {"test_ratio", c.data.test_ratio},
        {"val_ratio", c.data.val_ratio},
        {"normalization", c.data.normalization}}},
      {"fold", c.fold},
      {"train",
       {{"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"batch_size", c.train.batch_size},
        {"n_tau", c.train.n_tau},
        {"learning_rate", c.train.adam.learning_rate},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"epsilon", c.train.adam.epsilon}}},
      {"eval",
       {{"grid", "980"},
        {"crossing_tolerance", c.eval.crossing_tolerance},
        {"loglik_n_taus", c.eval.loglik.n_taus},
        {"loglik_n_bins", c.eval.loglik.n_bins},
        {"loglik_floor", c.eval.loglik.floor},
        {"audit_grid", c.eval.audit_grid}}},
  };
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& root, const std::string& path) {
  const nlohmann::json* node = &root;
  std::string::size_type start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) fail(ErrorKind::Config, "field '" + path + "' is missing");
    node = &(*node)[key];
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

template <typename T>
T get(const nlohmann::json& root, const std::string& path) {
  const auto& v = field(root, path);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw std::invalid_argument("expected a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    fail(ErrorKind::Config, "field '" + path + "': " + e.what() + ", got " + v.dump());
  }
}

}  // namespace detail

/// Builds a RunConfig from a fully merged document. Field errors name the field.
[[nodiscard]] inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::get;
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed");
  c.preset = get<std::string>(j, "preset");
  try {
    apply_model_name(c.model, get<std::string>(j, "model.model"));
  } catch (const Error& e) {
    fail(ErrorKind::Config, "field 'model.model': " + e.message());
  }
  c.model.degree = get<std::size_t>(j, "model.degree");
  const auto integration = get<std::string>(j, "model.integration");
  require(integration == "extended" || integration == "truncate-to-d", ErrorKind::Config,
          "field 'model.integration': expected extended or truncate-to-d");
  c.model.integration = integration == "extended" ? IntegrationLength::Extended : IntegrationLength::TruncateToD;
  const auto endpoints = get<std::string>(j, "model.nam_endpoints");
  require(endpoints == "halved" || endpoints == "as-printed", ErrorKind::Config,
          "field 'model.nam_endpoints': expected halved or as-printed");
  c.model.endpoint_rule = endpoints == "halved" ? EndpointRule::Halved : EndpointRule::AsPrinted;
  c.model.penalty_weight = get<double>(j, "model.penalty_weight");
  c.model.fd_step = get<double>(j, "model.fd_step");
  c.model.monotone_fraction = get<double>(j, "model.monotone_fraction");
  c.model.hidden_activation = parse_activation(get<std::string>(j, "model.hidden_activation"));
  const auto& hidden = detail::field(j, "model.hidden");
  if (!hidden.is_null()) c.model.hidden = get<std::vector<std::size_t>>(j, "model.hidden");

  c.data.source = get<std::string>(j, "data.source");
  c.data.target = get<std::string>(j, "data.target");
  c.data.split = get<std::string>(j, "data.split");
  c.data.folds = get<std::size_t>(j, "data.folds");
  c.data.test_ratio = get<double>(j, "data.test_ratio");
  c.data.val_ratio = get<double>(j, "data.val_ratio");
  c.data.normalization = get<std::string>(j, "data.normalization");
  c.fold = get<std::size_t>(j, "fold");
  if (hidden.is_null()) c.model.hidden = preset_hidden(resolved_preset(c), c.model.family);

  c.train.max_epochs = get<std::size_t>(j, "train.max_epochs");
  c.train.patience = get<std::size_t>(j, "train.patience");
  c.train.batch_size = get<std::size_t>(j, "train.batch_size");
  c.train.n_tau = get<std::size_t>(j, "train.n_tau");
  c.train.adam.learning_rate = get<double>(j, "train.learning_rate");
  c.train.adam.beta1 = get<double>(j, "train.beta1");
  c.train.adam.beta2 = get<double>(j, "train.beta2");
  c.train.adam.epsilon = get<double>(j, "train.epsilon");
  c.train.seed = c.seed;

  const auto grid = get<std::string>(j, "eval.grid");
  require(grid == "980", ErrorKind::Config, "field 'eval.grid': only the 980 grid is supported");
  c.eval.crossing_tolerance = get<double>(j, "eval.crossing_tolerance");
  c.eval.loglik.n_taus = get<std::size_t>(j, "eval.loglik_n_taus");
  c.eval.loglik.n_bins = get<std::size_t>(j, "eval.loglik_n_bins");
  c.eval.loglik.floor = get<double>(j, "eval.loglik_floor");
  c.eval.audit_grid = get<std::size_t>(j, "eval.audit_grid");

  // Semantic checks, named by field.
  require(c.model.degree >= 1, ErrorKind::Config, "field 'model.degree': must be >= 1");
  if (c.model.family == Family::NAM) {
    require(c.model.degree >= 2 && c.model.degree % 2 == 0, ErrorKind::Config,
            "field 'model.degree': NAM quadrature degree must be even and >= 2");
  }
  require(c.model.penalty_weight >= 0.0, ErrorKind::Config, "field 'model.penalty_weight': must be >= 0");
  require(c.model.fd_step > 0.0, ErrorKind::Config, "field 'model.fd_step': must be > 0");
  require(c.model.monotone_fraction > 0.0 && c.model.monotone_fraction < 1.0, ErrorKind::Config,
          "field 'model.monotone_fraction': must lie in (0, 1)");
  require(!c.model.hidden.empty(), ErrorKind::Config, "field 'model.hidden': needs at least one layer");
  for (auto h : c.model.hidden) require(h >= 1, ErrorKind::Config, "field 'model.hidden': widths must be positive");
  require(c.data.split == "auto" || c.data.split == "glasses" || c.data.split == "random", ErrorKind::Config,
          "field 'data.split': expected auto, glasses or random");
  require(c.data.folds >= 1, ErrorKind::Config, "field 'data.folds': must be >= 1");
  require(c.fold < (resolved_split(c.data) == "glasses" ? 1 : c.data.folds), ErrorKind::Config,
          "field 'fold': index out of range for the fold plan");
  (void)parse_glasses_normalization(c.data.normalization);
  require(c.train.batch_size >= 1, ErrorKind::Config, "field 'train.batch_size': must be >= 1");
  require(c.train.n_tau >= 1, ErrorKind::Config, "field 'train.n_tau': must be >= 1");
  require(c.train.adam.learning_rate > 0.0, ErrorKind::Config, "field 'train.learning_rate': must be > 0");
  require(c.eval.loglik.n_bins >= 1, ErrorKind::Config, "field 'eval.loglik_n_bins': must be >= 1");
  require(c.eval.loglik.floor > 0.0, ErrorKind::Config, "field 'eval.loglik_floor': must be > 0");
  require(c.eval.audit_grid >= 2, ErrorKind::Config, "field 'eval.audit_grid': must be >= 2");
  return c;
}

/// The resolved document: defaults are filled in and the preset is expanded.
[[nodiscard]] inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j = default_config_json();
  j["seed"] = c.seed;
  j["preset"] = resolved_preset(c);
  auto model = spec_to_json(c.model);
  model.erase("input_dim");
  j["model"] = model;
  j["data"] = {{"source", c.data.source},       {"target", c.data.target},         {"split", resolved_split(c.data)},
               {"folds", c.data.folds},         {"test_ratio", c.data.test_ratio}, {"val_ratio", c.data.val_ratio},
               {"normalization", c.data.normalization}};
  j["fold"] = c.fold;
  j["train"] = {{"max_epochs", c.train.max_epochs},         {"patience", c.train.patience},
                {"batch_size", c.train.batch_size},         {"n_tau", c.train.n_tau},
                {"learning_rate", c.train.adam.learning_rate}, {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},              {"epsilon", c.train.adam.epsilon}};
  j["eval"] = {{"grid", "980"},
               {"crossing_tolerance", c.eval.crossing_tolerance},
               {"loglik_n_taus", c.eval.loglik.n_taus},
               {"loglik_n_bins", c.eval.loglik.n_bins},
               {"loglik_floor", c.eval.loglik.floor},
               {"audit_grid", c.eval.audit_grid}};
  return j;
}

[[nodiscard]] inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Defaults merged with `file_doc` and then `overrides` (both JSON merge patches).
[[nodiscard]] inline RunConfig resolve_config(const nlohmann::json& file_doc, const nlohmann::json& overrides) {
  nlohmann::json j = default_config_json();
  if (!file_doc.is_null()) {
    require(file_doc.is_object(), ErrorKind::Config, "config file must hold a JSON object");
    j.merge_patch(file_doc);
  }
  if (!overrides.is_null()) j.merge_patch(overrides);
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data resolution

struct PreparedData {
  Dataset dataset;
  FoldPlan plan;
  StandardizedFold fold;
};

[[nodiscard]] inline Dataset load_dataset(const RunConfig& c) {
  if (c.data.source == "glasses") return gen_glasses(c.seed, parse_glasses_normalization(c.data.normalization));
  return load_csv(c.data.source, c.data.target);
}

[[nodiscard]] inline FoldPlan fold_plan(const RunConfig& c, std::size_t n) {
  if (resolved_split(c.data) == "glasses") {
    require(n == 2 * kGlassesBranchSize, ErrorKind::Data,
            "glasses split expects 6000 rows, dataset has " + std::to_string(n));
    return glasses_fold_plan(c.seed);
  }
  return make_folds(n, c.data.folds, c.data.test_ratio, c.data.val_ratio, derive_seed(c.seed, stream::folds));
}

[[nodiscard]] inline PreparedData prepare_data(const RunConfig& c) {
  PreparedData p;
  p.dataset = load_dataset(c);
  p.plan = fold_plan(c, p.dataset.size());
  require(c.fold < p.plan.folds.size(), ErrorKind::Config, "field 'fold': index out of range for the fold plan");
  p.fold = standardize(p.dataset, p.plan.folds[c.fold]);
  return p;
}

}  // namespace chebqr
