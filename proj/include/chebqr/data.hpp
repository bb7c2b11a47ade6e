#pragma once

// Datasets: the synthetic "glasses" mixture, CSV ingestion, seeded fold plans
// and train-fold standardization.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "chebqr/error.hpp"
#include "chebqr/matrix.hpp"
#include "chebqr/random.hpp"

namespace chebqr {

struct Dataset {
  std::string name;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  Matrix features;
  std::vector<double> targets;
  /// Ingestion notes such as dropped columns.
  std::vector<std::string> log;

  [[nodiscard]] std::size_t size() const noexcept { return targets.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return features.cols(); }
};

// ---------------------------------------------------------------------------
// Glasses

enum class GlassesNormalization {
  /// x and y both divided by max |y| over the merged sample.
  MaxAbsY,
  /// x divided by max x (so x lies in [0, 1]), y divided by max |y|.
  Separate,
  None,
};

[[nodiscard]] inline std::string to_string(GlassesNormalization mode) {
  switch (mode) {
    case GlassesNormalization::MaxAbsY: return "max-abs-y";
    case GlassesNormalization::Separate: return "separate";
    case GlassesNormalization::None: return "none";
  }
  return "max-abs-y";
}

[[nodiscard]] inline GlassesNormalization parse_glasses_normalization(const std::string& s) {
  if (s == "max-abs-y") return GlassesNormalization::MaxAbsY;
  if (s == "separate") return GlassesNormalization::Separate;
  if (s == "none") return GlassesNormalization::None;
  fail(ErrorKind::Config, "unknown glasses normalization '" + s + "' (max-abs-y, separate, none)");
}

inline constexpr std::size_t kGlassesBranchSize = 3000;

/// Two-branch sine mixture with one-sided Beta(0.5, 1) noise: branch one on
/// [0, 3 pi) shifted up, branch two on [pi, 4 pi) shifted down. Grids are
/// half-open and equidistant. Beta(0.5, 1) draws are u^2 for u uniform.
[[nodiscard]] inline Dataset gen_glasses(std::uint64_t seed,
                                         GlassesNormalization normalization = GlassesNormalization::MaxAbsY) {
  Rng rng(derive_seed(seed, stream::data));
  const std::size_t n = 2 * kGlassesBranchSize;
  Dataset ds;
  ds.name = "glasses";
  ds.feature_names = {"x"};
  ds.target_name = "y";
  ds.features = Matrix(n, 1);
  ds.targets.resize(n);
  const double pi = std::numbers::pi;
  const double step = 3.0 * pi / static_cast<double>(kGlassesBranchSize);
  for (std::size_t i = 0; i < kGlassesBranchSize; ++i) {
    const double x = static_cast<double>(i) * step;
    const double u = rng.uniform();
    ds.features(i, 0) = x;
    ds.targets[i] = 5.0 * std::sin(x) + 0.5 + u * u;
  }
  for (std::size_t i = 0; i < kGlassesBranchSize; ++i) {
    const double x = pi + static_cast<double>(i) * step;
    const double u = rng.uniform();
    ds.features(kGlassesBranchSize + i, 0) = x;
    ds.targets[kGlassesBranchSize + i] = 5.0 * std::sin(x) + 0.5 - u * u;
  }
  double max_abs_y = 0.0;
  double max_x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    max_abs_y = std::max(max_abs_y, std::abs(ds.targets[i]));
    max_x = std::max(max_x, ds.features(i, 0));
  }
  if (normalization != GlassesNormalization::None) {
    const double x_scale = normalization == GlassesNormalization::Separate ? max_x : max_abs_y;
    for (std::size_t i = 0; i < n; ++i) {
      ds.features(i, 0) /= x_scale;
      ds.targets[i] /= max_abs_y;
    }
  }
  ds.log.push_back("normalization=" + to_string(normalization));
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view text, double& value) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(value);
}

}  // namespace detail

/// Shortest round-trip decimal form of a double.
[[nodiscard]] inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Parses a header + numeric rows CSV. `target_column` empty selects the last
/// column. Columns that are constant over all rows are dropped and logged.
[[nodiscard]] inline Dataset parse_csv(std::istream& in, const std::string& target_column = "",
                                       const std::string& name = "csv") {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Data, "CSV is empty (header row required)");
  std::vector<std::string> header;
  for (auto h : detail::split_commas(line)) header.emplace_back(h);
  std::size_t target = header.size() - 1;
  if (!target_column.empty()) {
    const auto it = std::find(header.begin(), header.end(), target_column);
    require(it != header.end(), ErrorKind::Data, "target column '" + target_column + "' not found in header");
    target = static_cast<std::size_t>(it - header.begin());
  }
  require(header.size() >= 2, ErrorKind::Data, "CSV needs at least one feature and one target column");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    require(cells.size() == header.size(), ErrorKind::Data,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_double(cells[c], row[c])) {
        fail(ErrorKind::Data, "line " + std::to_string(line_no) + ", column '" + header[c] + "': cannot parse '" +
                                  std::string(cells[c]) + "' as a number");
      }
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::Data, "CSV has no data rows");

  Dataset ds;
  ds.name = name;
  ds.target_name = header[target];
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target) continue;
    const double first = rows.front()[c];
    const bool constant = std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r[c] == first; });
    if (constant) {
      ds.log.push_back("dropped constant column '" + header[c] + "'");
      continue;
    }
    kept.push_back(c);
    ds.feature_names.push_back(header[c]);
  }
  require(!kept.empty(), ErrorKind::Data, "no non-constant feature columns");
  ds.features = Matrix(rows.size(), kept.size());
  ds.targets.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < kept.size(); ++k) ds.features(r, k) = rows[r][kept[k]];
    ds.targets[r] = rows[r][target];
  }
  return ds;
}

[[nodiscard]] inline Dataset load_csv(const std::string& path, const std::string& target_column = "") {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path + "'");
  auto name = path;
  if (const auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (const auto dot = name.find_last_of('.'); dot != std::string::npos) name = name.substr(0, dot);
  return parse_csv(in, target_column, name);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  for (const auto& f : ds.feature_names) out << f << ',';
  out << ds.target_name << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.dim(); ++c) out << format_double(ds.features(r, c)) << ',';
    out << format_double(ds.targets[r]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Folds

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double test_ratio = 0.1;
  double val_ratio = 0.1;
  std::vector<Fold> folds;
};

/// floor(n * ratio) robust to representation error in the ratio.
[[nodiscard]] inline std::size_t ratio_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
}

/// Each fold is an independent shuffle from derive_seed(seed, fold): the first
/// floor(n * test_ratio) indices are test, the next floor(rest * val_ratio) are
/// validation and the remainder is train. Index lists are sorted.
[[nodiscard]] inline FoldPlan make_folds(std::size_t n, std::size_t n_folds, double test_ratio, double val_ratio,
                                         std::uint64_t seed) {
  require(n_folds >= 1, ErrorKind::Config, "need at least one fold");
  require(test_ratio > 0.0 && test_ratio < 1.0 && val_ratio > 0.0 && val_ratio < 1.0, ErrorKind::Config,
          "fold ratios must lie in (0, 1)");
  const std::size_t n_test = ratio_count(n, test_ratio);
  const std::size_t n_val = ratio_count(n - n_test, val_ratio);
  require(n_test >= 1 && n_val >= 1 && n_test + n_val < n, ErrorKind::Data,
          "dataset of " + std::to_string(n) + " rows is too small to populate train, validation and test");
  FoldPlan plan{n, seed, test_ratio, val_ratio, {}};
  for (std::size_t f = 0; f < n_folds; ++f) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(derive_seed(seed, f));
    rng.shuffle(perm);
    Fold fold;
    fold.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    fold.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test),
                           perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    fold.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), perm.end());
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.validation.begin(), fold.validation.end());
    std::sort(fold.train.begin(), fold.train.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

/// The glasses protocol: 50% test, 10% validation, 40% train.
[[nodiscard]] inline FoldPlan glasses_fold_plan(std::uint64_t seed) {
  return make_folds(2 * kGlassesBranchSize, 1, 0.5, 0.2, derive_seed(seed, stream::folds));
}

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;

  [[nodiscard]] Matrix transform(const Matrix& x) const {
    require(x.cols() == feature_mean.size(), ErrorKind::Dimension, "feature count differs from standardizer");
    Matrix out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = (out(r, c) - feature_mean[c]) / feature_std[c];
    }
    return out;
  }
  [[nodiscard]] double transform_target(double y) const { return (y - target_mean) / target_std; }
  [[nodiscard]] double inverse_target(double z) const { return z * target_std + target_mean; }
  [[nodiscard]] std::vector<double> transform_targets(std::span<const double> y) const {
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = transform_target(y[i]);
    return out;
  }
};

namespace detail {
inline std::pair<double, double> mean_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}
}  // namespace detail

/// Population mean/std over the train rows. A feature that is constant within
/// the train rows keeps std 1 so it passes through centred.
[[nodiscard]] inline Standardizer fit_standardizer(const Dataset& ds, std::span<const std::size_t> train) {
  require(!train.empty(), ErrorKind::Data, "standardization needs a non-empty train split");
  Standardizer s;
  std::vector<double> column(train.size());
  for (std::size_t c = 0; c < ds.dim(); ++c) {
    for (std::size_t i = 0; i < train.size(); ++i) column[i] = ds.features(train[i], c);
    auto [mean, sd] = detail::mean_std(column);
    s.feature_mean.push_back(mean);
    s.feature_std.push_back(sd > 0.0 ? sd : 1.0);
  }
  for (std::size_t i = 0; i < train.size(); ++i) column[i] = ds.targets[train[i]];
  auto [mean, sd] = detail::mean_std(column);
  require(sd > 0.0, ErrorKind::Data, "target has zero variance on the train split");
  s.target_mean = mean;
  s.target_std = sd;
  return s;
}

struct StandardizedFold {
  Standardizer stats;
  Matrix x_train, x_val, x_test;
  std::vector<double> y_train, y_val, y_test;
};

[[nodiscard]] inline StandardizedFold standardize(const Dataset& ds, const Fold& fold) {
  StandardizedFold out;
  out.stats = fit_standardizer(ds, fold.train);
  out.x_train = out.stats.transform(select_rows(ds.features, fold.train));
  out.x_val = out.stats.transform(select_rows(ds.features, fold.validation));
  out.x_test = out.stats.transform(select_rows(ds.features, fold.test));
  const std::span<const double> y(ds.targets);
  out.y_train = out.stats.transform_targets(select<double>(y, fold.train));
  out.y_val = out.stats.transform_targets(select<double>(y, fold.validation));
  out.y_test = out.stats.transform_targets(select<double>(y, fold.test));
  return out;
}

}  // namespace chebqr
