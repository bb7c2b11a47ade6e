#pragma once

// Chebyshev machinery on the quantile domain [0, 1]: root grids, the
// value-to-coefficient transform, coefficient-space integration, Clenshaw
// evaluation, Clenshaw-Curtis quadrature on [0, tau] and diagnostics.
//
// A series c_0..c_{m-1} represents p(tau) = c_0/2 + sum_{k>=1} c_k T_k(2 tau - 1).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chebqr/error.hpp"
#include "chebqr/matrix.hpp"

namespace chebqr {

struct ChebGrid {
  std::size_t degree = 0;
  /// roots[k] = cos(pi (k + 1/2) / d) / 2 + 1/2, strictly decreasing in k.
  std::vector<double> roots;
  /// degree x degree, row j column k holds cos(j pi (k + 1/2) / d).
  Matrix cos_matrix;

  /// Roots in ascending order, i.e. roots reversed.
  [[nodiscard]] std::vector<double> ascending_roots() const { return {roots.rbegin(), roots.rend()}; }
};

[[nodiscard]] inline ChebGrid make_grid(std::size_t degree) {
  require(degree >= 1, ErrorKind::InvalidDegree, "Chebyshev degree must be >= 1");
  ChebGrid grid;
  grid.degree = degree;
  grid.roots.resize(degree);
  grid.cos_matrix = Matrix(degree, degree);
  const double d = static_cast<double>(degree);
  for (std::size_t k = 0; k < degree; ++k) {
    grid.roots[k] = 0.5 * std::cos(std::numbers::pi * (static_cast<double>(k) + 0.5) / d) + 0.5;
  }
  for (std::size_t j = 0; j < degree; ++j) {
    for (std::size_t k = 0; k < degree; ++k) {
      grid.cos_matrix(j, k) =
          std::cos(static_cast<double>(j) * std::numbers::pi * (static_cast<double>(k) + 0.5) / d);
    }
  }
  return grid;
}

struct ChebSeries {
  std::vector<double> coeffs;

  [[nodiscard]] std::size_t size() const noexcept { return coeffs.size(); }
};

/// DCT-II at the roots: c_j = (2/d) sum_k values[k] cos(j pi (k + 1/2) / d).
inline void values_to_coeffs(const ChebGrid& grid, std::span<const double> values, std::span<double> coeffs) {
  const std::size_t d = grid.degree;
  require(values.size() == d && coeffs.size() == d, ErrorKind::Dimension,
          "expected " + std::to_string(d) + " values, got " + std::to_string(values.size()));
  const double scale = 2.0 / static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto cosines = grid.cos_matrix.row(j);
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) sum += values[k] * cosines[k];
    coeffs[j] = scale * sum;
  }
}

[[nodiscard]] inline ChebSeries values_to_coeffs(const ChebGrid& grid, std::span<const double> values) {
  require(values.size() == grid.degree, ErrorKind::Dimension,
          "expected " + std::to_string(grid.degree) + " values, got " + std::to_string(values.size()));
  ChebSeries series{std::vector<double>(grid.degree)};
  values_to_coeffs(grid, values, series.coeffs);
  return series;
}

/// Transpose of values_to_coeffs, used to pull gradients back onto the values.
inline void values_to_coeffs_adjoint(const ChebGrid& grid, std::span<const double> grad_coeffs,
                                     std::span<double> grad_values) {
  const std::size_t d = grid.degree;
  require(grad_coeffs.size() == d && grad_values.size() == d, ErrorKind::Dimension,
          "adjoint transform size mismatch");
  const double scale = 2.0 / static_cast<double>(d);
  std::fill(grad_values.begin(), grad_values.end(), 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const auto cosines = grid.cos_matrix.row(j);
    const double g = scale * grad_coeffs[j];
    for (std::size_t k = 0; k < d; ++k) grad_values[k] += g * cosines[k];
  }
}

// ---------------------------------------------------------------------------
// Integration in coefficient space

enum class ConstantMode {
  /// K is the value at tau = 0 (the lowest quantile).
  Q0,
  /// C_0 = 2K - 2 sum_{k odd} C_k / (k^2 - 4), taken verbatim; see mean_condition_diagnostic.
  Mean,
};

enum class IntegrationLength {
  /// d + 1 coefficients: the exact antiderivative of the degree d-1 interpolant.
  Extended,
  /// d coefficients, dropping the top mode C_d = c_{d-1} / (4d).
  TruncateToD,
};

[[nodiscard]] inline std::size_t integrated_length(std::size_t degree, IntegrationLength length) noexcept {
  return length == IntegrationLength::Extended ? degree + 1 : degree;
}

/// Weight of C_k in the constant-of-integration sum: C_0 = 2K - 2 sum_{k>=1} C_k w_k.
[[nodiscard]] inline double constant_weight(std::size_t k, ConstantMode mode) noexcept {
  if (mode == ConstantMode::Q0) return (k % 2 == 0) ? 1.0 : -1.0;
  if (k % 2 == 0) return 0.0;
  const double kk = static_cast<double>(k);
  return 1.0 / (kk * kk - 4.0);
}

/// Integrates c (length d) into out (length d+1 or d). C_k = (c_{k-1} - c_{k+1}) / (4k)
/// with c_j = 0 for j >= d; C_0 is fixed by `mode` and K.
inline void integrate_coeffs(std::span<const double> c, double K, ConstantMode mode, std::span<double> out) {
  const std::size_t d = c.size();
  const std::size_t m = out.size();
  require(d >= 1, ErrorKind::InvalidDegree, "empty derivative series");
  require(m == d || m == d + 1, ErrorKind::Dimension, "integrated length must be d or d+1");
  auto at = [&](std::size_t j) { return j < d ? c[j] : 0.0; };
  double shift = 0.0;
  for (std::size_t k = 1; k < m; ++k) {
    out[k] = (at(k - 1) - at(k + 1)) / (4.0 * static_cast<double>(k));
    shift += out[k] * constant_weight(k, mode);
  }
  out[0] = 2.0 * K - 2.0 * shift;
}

/// Transpose of integrate_coeffs: given dL/dC (length m) returns dL/dc into grad_c
/// (length d) and dL/dK.
inline double integrate_coeffs_adjoint(std::span<const double> grad_C, ConstantMode mode,
                                       std::span<double> grad_c) {
  const std::size_t d = grad_c.size();
  const std::size_t m = grad_C.size();
  require(m == d || m == d + 1, ErrorKind::Dimension, "integrated length must be d or d+1");
  const double g0 = grad_C[0];
  std::fill(grad_c.begin(), grad_c.end(), 0.0);
  for (std::size_t k = 1; k < m; ++k) {
    // Effective gradient of C_k including its appearance in C_0.
    const double gk = (grad_C[k] - 2.0 * g0 * constant_weight(k, mode)) / (4.0 * static_cast<double>(k));
    grad_c[k - 1] += gk;
    if (k + 1 < d) grad_c[k + 1] -= gk;
  }
  return 2.0 * g0;
}

struct IntegratedSeries {
  std::vector<double> coeffs;
  ConstantMode constant_mode = ConstantMode::Q0;
  /// Degree d of the derivative series the integral came from.
  std::size_t source_degree = 0;
  /// (|c_{d-1}|, |c_{d-2}|) of the source series (second entry 0 when d = 1).
  std::pair<double, double> source_decay{0.0, 0.0};
};

[[nodiscard]] inline IntegratedSeries integrate_series(const ChebSeries& series, double K, ConstantMode mode,
                                                       IntegrationLength length = IntegrationLength::Extended) {
  const std::size_t d = series.size();
  require(d >= 1, ErrorKind::InvalidDegree, "cannot integrate an empty series");
  require(std::isfinite(K), ErrorKind::Numeric, "constant of integration is not finite");
  for (double c : series.coeffs) require(std::isfinite(c), ErrorKind::Numeric, "non-finite coefficient");
  IntegratedSeries result;
  result.coeffs.resize(integrated_length(d, length));
  result.constant_mode = mode;
  result.source_degree = d;
  result.source_decay = {std::abs(series.coeffs[d - 1]), d >= 2 ? std::abs(series.coeffs[d - 2]) : 0.0};
  integrate_coeffs(series.coeffs, K, mode, result.coeffs);
  return result;
}

/// Derivative with respect to tau of a series on [0, 1]; output has one fewer
/// coefficient (a single coefficient yields the zero series of length 1).
[[nodiscard]] inline std::vector<double> differentiate_series(std::span<const double> coeffs) {
  const std::size_t m = coeffs.size();
  require(m >= 1, ErrorKind::InvalidDegree, "empty series");
  if (m == 1) return {0.0};
  std::vector<double> b(m + 1, 0.0);
  for (std::size_t k = m - 1; k >= 1; --k) {
    b[k - 1] = b[k + 1] + 2.0 * static_cast<double>(k) * coeffs[k];
  }
  // d/dtau = 2 d/dsigma
  std::vector<double> out(m - 1);
  for (std::size_t k = 0; k + 1 < m; ++k) out[k] = 2.0 * b[k];
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorKind::Domain, "tau " + std::to_string(tau) + " outside [0, 1]");
}

/// Clenshaw backward recurrence on sigma = 2 tau - 1.
[[nodiscard]] inline double eval_cheb(std::span<const double> coeffs, double tau) {
  require(!coeffs.empty(), ErrorKind::InvalidDegree, "cannot evaluate an empty series");
  check_tau(tau);
  double d1 = 0.0;
  double d2 = 0.0;
  const double sigma = 2.0 * tau - 1.0;
  for (std::size_t k = coeffs.size() - 1; k >= 1; --k) {
    const double d3 = d1;
    d1 = 2.0 * sigma * d1 - d2 + coeffs[k];
    d2 = d3;
  }
  return sigma * d1 - d2 + 0.5 * coeffs[0];
}

/// Evaluates every row of `coeffs` at every tau: result(i, j) = eval_cheb(row i, taus[j]).
[[nodiscard]] inline Matrix eval_batch(const Matrix& coeffs, std::span<const double> taus) {
  for (double t : taus) check_tau(t);
  Matrix out(coeffs.rows(), taus.size());
  for (std::size_t i = 0; i < coeffs.rows(); ++i) {
    for (std::size_t j = 0; j < taus.size(); ++j) out(i, j) = eval_cheb(coeffs.row(i), taus[j]);
  }
  return out;
}

/// dP/dC_k at tau: 1/2 for k = 0, T_k(2 tau - 1) otherwise.
inline void cheb_basis(double tau, std::span<double> basis) {
  check_tau(tau);
  if (basis.empty()) return;
  const double sigma = 2.0 * tau - 1.0;
  double prev = 1.0;
  double cur = sigma;
  basis[0] = 0.5;
  if (basis.size() > 1) basis[1] = sigma;
  for (std::size_t k = 2; k < basis.size(); ++k) {
    const double next = 2.0 * sigma * cur - prev;
    basis[k] = next;
    prev = cur;
    cur = next;
  }
}

// ---------------------------------------------------------------------------
// Clenshaw-Curtis quadrature on [0, tau]

enum class EndpointRule {
  /// Standard rule: first and last node weighted by 1/2; exact for constants.
  Halved,
  /// Sum over all nodes with unit weight, as the NAM formula is usually printed.
  AsPrinted,
};

struct CCNodes {
  std::size_t degree = 0;
  double tau = 0.0;
  /// nodes[k] = (tau/2) cos(pi k / d) + tau/2; nodes[0] = tau, nodes[d] = 0.
  std::vector<double> nodes;
};

inline void check_cc_degree(std::size_t degree) {
  require(degree >= 2 && degree % 2 == 0, ErrorKind::InvalidDegree,
          "Clenshaw-Curtis degree must be even and >= 2, got " + std::to_string(degree));
}

[[nodiscard]] inline CCNodes make_cc_nodes(std::size_t degree, double tau) {
  check_cc_degree(degree);
  check_tau(tau);
  CCNodes out{degree, tau, std::vector<double>(degree + 1)};
  const double d = static_cast<double>(degree);
  for (std::size_t k = 0; k <= degree; ++k) {
    out.nodes[k] = 0.5 * tau * std::cos(std::numbers::pi * static_cast<double>(k) / d) + 0.5 * tau;
  }
  out.nodes[0] = tau;
  out.nodes[degree] = 0.0;
  return out;
}

/// Weights w_k such that the quadrature equals tau * sum_k w_k phi(nodes[k]) + K0.
[[nodiscard]] inline std::vector<double> cc_weights(std::size_t degree, EndpointRule rule) {
  check_cc_degree(degree);
  const double d = static_cast<double>(degree);
  std::vector<double> w(degree + 1);
  for (std::size_t k = 0; k <= degree; ++k) {
    double inner = 0.5;
    for (std::size_t i = 1; i <= degree / 2; ++i) {
      const double ii = static_cast<double>(i);
      inner -= std::cos(2.0 * ii * std::numbers::pi * static_cast<double>(k) / d) / (4.0 * ii * ii - 1.0);
    }
    const bool endpoint = (k == 0 || k == degree);
    const double h = (rule == EndpointRule::Halved && endpoint) ? 0.5 : 1.0;
    w[k] = 2.0 / d * h * inner;
  }
  return w;
}

/// P = tau (cbar_0 / 2 - sum_{k=1}^{d/2} cbar_{2k} / (4k^2 - 1)) + K0 with
/// cbar_j = (2/d) sum_k h_k phi_k cos(j pi k / d), computed via the cosine transform.
[[nodiscard]] inline double clenshaw_curtis_integral(std::span<const double> phi_values, double tau, double K0,
                                                     EndpointRule rule = EndpointRule::Halved) {
  require(!phi_values.empty(), ErrorKind::InvalidDegree, "no quadrature values");
  const std::size_t degree = phi_values.size() - 1;
  check_cc_degree(degree);
  check_tau(tau);
  const double d = static_cast<double>(degree);
  auto cbar = [&](std::size_t j) {
    double sum = 0.0;
    for (std::size_t k = 0; k <= degree; ++k) {
      const bool endpoint = (k == 0 || k == degree);
      const double h = (rule == EndpointRule::Halved && endpoint) ? 0.5 : 1.0;
      sum += h * phi_values[k] *
             std::cos(static_cast<double>(j) * std::numbers::pi * static_cast<double>(k) / d);
    }
    return 2.0 / d * sum;
  };
  double acc = 0.5 * cbar(0);
  for (std::size_t k = 1; k <= degree / 2; ++k) {
    const double kk = static_cast<double>(k);
    acc -= cbar(2 * k) / (4.0 * kk * kk - 1.0);
  }
  return tau * acc + K0;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// (|c_{m-1}|, |c_{m-2}|): the two highest coefficients of a series.
[[nodiscard]] inline std::pair<double, double> decay_diagnostic(const ChebSeries& series) {
  const std::size_t m = series.size();
  require(m >= 2, ErrorKind::InsufficientDegree, "decay diagnostic needs at least two coefficients");
  return {std::abs(series.coeffs[m - 1]), std::abs(series.coeffs[m - 2])};
}

/// decay_diagnostic divided by max_k |c_k|; an all-zero series reports (0, 0).
[[nodiscard]] inline std::pair<double, double> normalized_decay_diagnostic(const ChebSeries& series) {
  auto [last, second] = decay_diagnostic(series);
  double scale = 0.0;
  for (double c : series.coeffs) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {0.0, 0.0};
  return {last / scale, second / scale};
}

struct MonotonicityAudit {
  std::size_t points = 0;
  std::size_t decreases = 0;
  double min_derivative = std::numeric_limits<double>::infinity();
};

/// Evaluates P on n_grid equidistant taus in [0, 1] merged with the roots of the
/// source degree, counting strict decreases between neighbours.
[[nodiscard]] inline MonotonicityAudit monotonicity_audit(const IntegratedSeries& integrated, std::size_t n_grid) {
  require(n_grid >= 2, ErrorKind::Usage, "audit needs n_grid >= 2");
  std::vector<double> taus;
  taus.reserve(n_grid + integrated.source_degree);
  for (std::size_t i = 0; i < n_grid; ++i) {
    taus.push_back(static_cast<double>(i) / static_cast<double>(n_grid - 1));
  }
  if (integrated.source_degree >= 1) {
    const auto grid = make_grid(integrated.source_degree);
    taus.insert(taus.end(), grid.roots.begin(), grid.roots.end());
  }
  std::sort(taus.begin(), taus.end());
  const auto derivative = differentiate_series(integrated.coeffs);

  MonotonicityAudit audit;
  audit.points = taus.size();
  double previous = eval_cheb(integrated.coeffs, taus[0]);
  audit.min_derivative = eval_cheb(derivative, taus[0]);
  for (std::size_t i = 1; i < taus.size(); ++i) {
    const double value = eval_cheb(integrated.coeffs, taus[i]);
    if (value < previous) ++audit.decreases;
    previous = value;
    audit.min_derivative = std::min(audit.min_derivative, eval_cheb(derivative, taus[i]));
  }
  return audit;
}

/// Gauss-Legendre nodes and weights on [0, 1], exact for polynomials of degree <= 2n - 1.
[[nodiscard]] inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n) {
  require(n >= 1, ErrorKind::InvalidDegree, "Gauss-Legendre needs n >= 1");
  std::vector<double> nodes(n);
  std::vector<double> weights(n);
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nn + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0;
      double p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jj = static_cast<double>(j);
        p1 = ((2.0 * jj - 1.0) * z * p2 - (jj - 1.0) * p3) / jj;
      }
      dp = nn * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    // Map from [-1, 1] to [0, 1].
    nodes[i] = 0.5 - 0.5 * z;
    nodes[n - 1 - i] = 0.5 + 0.5 * z;
    const double w = 1.0 / ((1.0 - z * z) * dp * dp);
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
  return {nodes, weights};
}

struct MeanConditionDiagnostic {
  double K = 0.0;
  /// integral over [0, 1] of tau P(tau): the condition the Mean constant imposes.
  double tau_weighted_integral = 0.0;
  /// integral over [0, 1] of P(tau): the mean of the represented distribution.
  double mean_integral = 0.0;
  double tau_weighted_residual = 0.0;
  double mean_residual = 0.0;
};

/// Measures how the Mean-mode constant relates to K under both readings of "mean".
[[nodiscard]] inline MeanConditionDiagnostic mean_condition_diagnostic(const IntegratedSeries& integrated,
                                                                       double K) {
  const auto [nodes, weights] = gauss_legendre(integrated.coeffs.size() + 2);
  MeanConditionDiagnostic diag;
  diag.K = K;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double value = eval_cheb(integrated.coeffs, nodes[i]);
    diag.tau_weighted_integral += weights[i] * nodes[i] * value;
    diag.mean_integral += weights[i] * value;
  }
  diag.tau_weighted_residual = diag.tau_weighted_integral - K;
  diag.mean_residual = diag.mean_integral - K;
  return diag;
}

}  // namespace chebqr
