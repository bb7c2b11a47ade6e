#pragma once

// Test-set protocols: crossing counts on a tau grid, the histogram
// log-likelihood, decile pinball means and ChebQR diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chebqr/cheb.hpp"
#include "chebqr/data.hpp"
#include "chebqr/error.hpp"
#include "chebqr/losses.hpp"
#include "chebqr/matrix.hpp"
#include "chebqr/models.hpp"

namespace chebqr {

inline void check_ascending(std::span<const double> taus) {
  for (std::size_t j = 1; j < taus.size(); ++j) {
    require(taus[j] > taus[j - 1], ErrorKind::Usage, "taus must be strictly ascending");
  }
}

/// Number of (row, j) with q(row, j + 1) < q(row, j) - tolerance.
[[nodiscard]] inline std::size_t count_crossings(const Matrix& predictions, std::span<const double> taus,
                                                 double tolerance = 0.0) {
  require(predictions.cols() == taus.size(), ErrorKind::Dimension, "one prediction column per tau required");
  require(tolerance >= 0.0, ErrorKind::Config, "crossing tolerance must be non-negative");
  check_ascending(taus);
  std::size_t count = 0;
  for (std::size_t i = 0; i < predictions.rows(); ++i) {
    for (std::size_t j = 0; j + 1 < predictions.cols(); ++j) {
      if (predictions(i, j + 1) < predictions(i, j) - tolerance) ++count;
    }
  }
  return count;
}

/// 0.010, 0.011, ..., 0.990, both endpoints included (981 points).
[[nodiscard]] inline std::vector<double> grid_980() {
  std::vector<double> g(981);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(10 + i) / 1000.0;
  return g;
}

/// j / (n + 1) for j = 1..n.
[[nodiscard]] inline std::vector<double> open_grid(std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t j = 0; j < n; ++j) g[j] = static_cast<double>(j + 1) / static_cast<double>(n + 1);
  return g;
}

[[nodiscard]] inline std::vector<double> decile_taus() {
  std::vector<double> g(9);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = static_cast<double>(j + 1) / 10.0;
  return g;
}

struct LoglikConfig {
  std::size_t n_taus = 1000;
  std::size_t n_bins = 100;
  double floor = 1e-12;
};

/// Histogram log-likelihood. Row i of `predictions` holds the predicted
/// quantiles for target y[i]. Bins split [min, max] of targets and predictions
/// into n_bins equal parts; the density at y is (quantiles in y's bin) /
/// (quantiles per row * bin width), floored at `floor` before the log.
[[nodiscard]] inline double discretized_loglik(const Matrix& predictions, std::span<const double> y,
                                               std::size_t n_bins = 100, double floor = 1e-12) {
  require(predictions.rows() == y.size(), ErrorKind::Dimension, "one prediction row per target required");
  require(!y.empty() && predictions.cols() >= 1, ErrorKind::Usage, "empty evaluation set");
  require(n_bins >= 1, ErrorKind::Config, "n_bins must be positive");
  require(floor > 0.0, ErrorKind::Config, "density floor must be positive");
  double lo = *std::min_element(y.begin(), y.end());
  double hi = *std::max_element(y.begin(), y.end());
  for (double v : predictions.data()) {
    require(std::isfinite(v), ErrorKind::Numeric, "non-finite predicted quantile");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  require(hi > lo, ErrorKind::Data, "degenerate response range: all targets and predictions coincide");
  const double width = (hi - lo) / static_cast<double>(n_bins);
  auto bin = [&](double v) {
    const auto b = static_cast<std::size_t>((v - lo) / width);
    return std::min(b, n_bins - 1);
  };
  const double per_row = static_cast<double>(predictions.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t target_bin = bin(y[i]);
    std::size_t count = 0;
    for (double q : predictions.row(i)) count += bin(q) == target_bin ? 1 : 0;
    const double density = static_cast<double>(count) / (per_row * width);
    total += std::log(std::max(density, floor));
  }
  return total;
}

struct Percentiles {
  double p50 = 0.0;
  double p90 = 0.0;
  double max = 0.0;
};

/// Nearest-rank percentiles.
[[nodiscard]] inline Percentiles percentiles(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto rank = [&](double p) {
    const auto r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(r, 1, v.size()) - 1];
  };
  return {rank(0.5), rank(0.9), v.back()};
}

struct DecayStats {
  /// |c_{d-1}| / max_k |c_k| over test rows.
  Percentiles last;
  /// |c_{d-2}| / max_k |c_k| over test rows.
  Percentiles second_last;
};

struct AuditSummary {
  std::size_t n_grid = 1000;
  std::size_t rows_with_decreases = 0;
  std::size_t total_decreases = 0;
  double min_derivative = 0.0;
};

struct EvalConfig {
  std::vector<double> crossing_taus = grid_980();
  double crossing_tolerance = 0.0;
  LoglikConfig loglik{};
  std::size_t audit_grid = 1000;
};

struct EvalReport {
  std::string model;
  std::size_t fold = 0;
  std::size_t n_test = 0;
  std::size_t crossing_count_grid = 0;
  /// ChebQR only: crossings on the ascending roots of the derivative grid.
  std::optional<std::size_t> crossing_count_roots;
  double loglik_sum = 0.0;
  std::vector<double> pinball_taus;
  /// Mean pinball per tau in standardized target units.
  std::vector<double> mean_pinball;
  std::optional<DecayStats> decay;
  std::optional<AuditSummary> audit;
  EvalConfig config;
  nlohmann::json config_echo;
};

/// Runs every protocol on the test split of a standardized fold.
[[nodiscard]] inline EvalReport evaluate_model(const QuantileModel& model, const StandardizedFold& data,
                                               std::size_t fold, const EvalConfig& config = {},
                                               const nlohmann::json& config_echo = {}) {
  const Matrix& x = data.x_test;
  const std::vector<double>& y = data.y_test;
  require(x.rows() == y.size() && !y.empty(), ErrorKind::Data, "empty test split");

  EvalReport report;
  report.model = model_name(model.spec());
  report.fold = fold;
  report.n_test = y.size();
  report.config = config;
  report.config_echo = config_echo;

  report.crossing_count_grid =
      count_crossings(model.predict(x, config.crossing_taus), config.crossing_taus, config.crossing_tolerance);

  // Likelihood in original target units.
  const auto ll_taus = open_grid(config.loglik.n_taus);
  Matrix q = model.predict(x, ll_taus);
  for (double& v : q.data()) v = data.stats.inverse_target(v);
  std::vector<double> y_orig(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y_orig[i] = data.stats.inverse_target(y[i]);
  report.loglik_sum = discretized_loglik(q, y_orig, config.loglik.n_bins, config.loglik.floor);

  report.pinball_taus = decile_taus();
  const Matrix qd = model.predict(x, report.pinball_taus);
  report.mean_pinball.assign(report.pinball_taus.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < report.pinball_taus.size(); ++j) {
      report.mean_pinball[j] += pinball(y[i], qd(i, j), report.pinball_taus[j]) / static_cast<double>(y.size());
    }
  }

  if (model.family() == Family::ChebQR) {
    const auto& m = model.chebqr();
    const auto roots = m.grid.ascending_roots();
    report.crossing_count_roots = count_crossings(model.predict(x, roots), roots, 0.0);

    const auto cs = model.coefficients(x);
    std::vector<double> last;
    std::vector<double> second;
    AuditSummary audit;
    audit.n_grid = config.audit_grid;
    audit.min_derivative = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto c = cs.derivative.row(i);
      if (c.size() >= 2) {
        const auto [l, s] = normalized_decay_diagnostic(ChebSeries{{c.begin(), c.end()}});
        last.push_back(l);
        second.push_back(s);
      }
      const auto integrated = cs.integrated.row(i);
      IntegratedSeries series{{integrated.begin(), integrated.end()}, model.spec().constant_mode, c.size(), {}};
      const auto a = monotonicity_audit(series, config.audit_grid);
      audit.total_decreases += a.decreases;
      audit.rows_with_decreases += a.decreases > 0 ? 1 : 0;
      audit.min_derivative = std::min(audit.min_derivative, a.min_derivative);
    }
    if (!last.empty()) report.decay = DecayStats{percentiles(last), percentiles(second)};
    report.audit = audit;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const Percentiles& p) {
  j = {{"p50", p.p50}, {"p90", p.p90}, {"max", p.max}};
}

[[nodiscard]] inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["format"] = "chebqr-eval-report";
  j["version"] = 1;
  j["model"] = r.model;
  j["fold"] = r.fold;
  j["n_test"] = r.n_test;
  j["crossing_count_grid"] = r.crossing_count_grid;
  j["crossing_count_roots"] = r.crossing_count_roots ? nlohmann::json(*r.crossing_count_roots) : nlohmann::json();
  j["loglik_sum"] = r.loglik_sum;
  j["pinball_taus"] = r.pinball_taus;
  j["mean_pinball"] = r.mean_pinball;
  if (r.decay) {
    j["decay"] = {{"last", r.decay->last}, {"second_last", r.decay->second_last}};
  } else {
    j["decay"] = nullptr;
  }
  if (r.audit) {
    j["monotonicity_audit"] = {{"n_grid", r.audit->n_grid},
                               {"rows_with_decreases", r.audit->rows_with_decreases},
                               {"total_decreases", r.audit->total_decreases},
                               {"min_derivative", r.audit->min_derivative}};
  } else {
    j["monotonicity_audit"] = nullptr;
  }
  const auto& cross = r.config.crossing_taus;
  j["protocol"] = {{"crossing_grid", {{"size", cross.size()},
                                      {"first", cross.empty() ? 0.0 : cross.front()},
                                      {"last", cross.empty() ? 0.0 : cross.back()}}},
                   {"crossing_tolerance", r.config.crossing_tolerance},
                   {"loglik_taus", "j/(n+1), j=1..n"},
                   {"loglik_n_taus", r.config.loglik.n_taus},
                   {"loglik_n_bins", r.config.loglik.n_bins},
                   {"loglik_floor", r.config.loglik.floor},
                   {"loglik_scale", "original"},
                   {"audit_grid", r.config.audit_grid}};
  j["config"] = r.config_echo;
  return j;
}

// ---------------------------------------------------------------------------
// Aggregation over folds

struct CellResult {
  std::string model;
  std::size_t fold = 0;
  bool ok = false;
  std::string error;
  std::size_t crossing_count_grid = 0;
  std::optional<std::size_t> crossing_count_roots;
  double loglik_sum = 0.0;
};

struct Aggregate {
  std::string model;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t crossings_min = 0;
  std::size_t crossings_max = 0;
  std::optional<std::size_t> roots_min;
  std::optional<std::size_t> roots_max;
  double loglik_mean = 0.0;
  /// Sample standard deviation (n - 1); 0 for a single fold.
  double loglik_std = 0.0;
};

/// One Aggregate per model in order of first appearance; failed cells are
/// counted but excluded from the statistics.
[[nodiscard]] inline std::vector<Aggregate> aggregate(std::span<const CellResult> cells) {
  std::vector<Aggregate> out;
  for (const auto& cell : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) { return a.model == cell.model; });
    if (it == out.end()) {
      Aggregate fresh;
      fresh.model = cell.model;
      out.push_back(std::move(fresh));
      it = std::prev(out.end());
    }
    if (!cell.ok) {
      ++it->failed;
      continue;
    }
    if (it->completed == 0) {
      it->crossings_min = it->crossings_max = cell.crossing_count_grid;
    } else {
      it->crossings_min = std::min(it->crossings_min, cell.crossing_count_grid);
      it->crossings_max = std::max(it->crossings_max, cell.crossing_count_grid);
    }
    if (cell.crossing_count_roots) {
      const auto r = *cell.crossing_count_roots;
      it->roots_min = it->roots_min ? std::min(*it->roots_min, r) : r;
      it->roots_max = it->roots_max ? std::max(*it->roots_max, r) : r;
    }
    ++it->completed;
  }
  for (auto& a : out) {
    std::vector<double> values;
    for (const auto& cell : cells) {
      if (cell.ok && cell.model == a.model) values.push_back(cell.loglik_sum);
    }
    if (values.empty()) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    a.loglik_mean = mean;
    a.loglik_std = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  }
  return out;
}

inline void write_cells_csv(std::span<const CellResult> cells, std::ostream& out) {
  out << "model,fold,status,crossing_count_grid,crossing_count_roots,loglik_sum,error\n";
  for (const auto& c : cells) {
    out << c.model << ',' << c.fold << ',' << (c.ok ? "ok" : "failed") << ',';
    if (c.ok) {
      out << c.crossing_count_grid << ',';
      if (c.crossing_count_roots) out << *c.crossing_count_roots;
      out << ',' << format_double(c.loglik_sum) << ',';
    } else {
      std::string msg = c.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ",,," << msg;
    }
    out << '\n';
  }
}

/// Crossing table: min and max over folds.
inline void write_crossing_table(std::span<const Aggregate> rows, std::ostream& out) {
  out << "model,completed,failed,crossings_min,crossings_max,roots_min,roots_max\n";
  for (const auto& a : rows) {
    out << a.model << ',' << a.completed << ',' << a.failed << ',';
    if (a.completed > 0) out << a.crossings_min << ',' << a.crossings_max;
    else out << ',';
    out << ',';
    if (a.roots_min) out << *a.roots_min;
    out << ',';
    if (a.roots_max) out << *a.roots_max;
    out << '\n';
  }
}

/// Likelihood table: mean and sample std over folds.
inline void write_loglik_table(std::span<const Aggregate> rows, std::ostream& out) {
  out << "model,completed,failed,loglik_mean,loglik_std\n";
  for (const auto& a : rows) {
    out << a.model << ',' << a.completed << ',' << a.failed << ',';
    if (a.completed > 0) out << format_double(a.loglik_mean) << ',' << format_double(a.loglik_std);
    else out << ',';
    out << '\n';
  }
}

}  // namespace chebqr
