#pragma once

// Training objectives. Each loss has a value-only form and a form returning the
// gradient with respect to the model outputs it consumes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "chebqr/error.hpp"
#include "chebqr/matrix.hpp"

namespace chebqr {

template <typename Grad>
struct LossGrad {
  double value = 0.0;
  Grad grad;
};

/// (y - q)(tau - 1[y < q]); non-negative for tau in [0, 1].
[[nodiscard]] inline double pinball(double y, double q, double tau) noexcept {
  return (y - q) * (tau - (y < q ? 1.0 : 0.0));
}

/// d pinball / dq.
[[nodiscard]] inline double pinball_grad(double y, double q, double tau) noexcept {
  return -(tau - (y < q ? 1.0 : 0.0));
}

/// Mean pinball loss over (prediction, target, tau) triples.
[[nodiscard]] inline double mc_quantile_loss(std::span<const double> predictions, std::span<const double> targets,
                                             std::span<const double> taus) {
  require(!predictions.empty(), ErrorKind::Usage, "empty batch");
  require(predictions.size() == targets.size() && predictions.size() == taus.size(), ErrorKind::Dimension,
          "predictions, targets and taus must have equal length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) sum += pinball(targets[i], predictions[i], taus[i]);
  return sum / static_cast<double>(predictions.size());
}

[[nodiscard]] inline LossGrad<std::vector<double>> mc_quantile_loss_grad(std::span<const double> predictions,
                                                                         std::span<const double> targets,
                                                                         std::span<const double> taus) {
  LossGrad<std::vector<double>> out{mc_quantile_loss(predictions, targets, taus),
                                    std::vector<double>(predictions.size())};
  const double scale = 1.0 / static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out.grad[i] = scale * pinball_grad(targets[i], predictions[i], taus[i]);
  }
  return out;
}

/// Anti-crossing penalty: `outputs` holds one row per sample and one column per
/// tau, columns sorted by ascending tau. Returns the mean over rows and adjacent
/// column pairs of max(0, q_j - q_{j+1}).
[[nodiscard]] inline LossGrad<Matrix> crossing_penalty_grad(const Matrix& outputs) {
  require(outputs.cols() >= 2, ErrorKind::Usage, "crossing penalty needs at least two taus");
  require(outputs.rows() >= 1, ErrorKind::Usage, "empty batch");
  LossGrad<Matrix> out{0.0, Matrix(outputs.rows(), outputs.cols())};
  const double scale = 1.0 / static_cast<double>(outputs.rows() * (outputs.cols() - 1));
  for (std::size_t i = 0; i < outputs.rows(); ++i) {
    for (std::size_t j = 0; j + 1 < outputs.cols(); ++j) {
      const double gap = outputs(i, j) - outputs(i, j + 1);
      if (gap > 0.0) {
        out.value += gap;
        out.grad(i, j) += scale;
        out.grad(i, j + 1) -= scale;
      }
    }
  }
  out.value *= scale;
  return out;
}

[[nodiscard]] inline double crossing_penalty(const Matrix& outputs) { return crossing_penalty_grad(outputs).value; }

struct DerivativePenaltyGrad {
  double value = 0.0;
  std::vector<double> grad_lower;
  std::vector<double> grad_upper;
};

/// Lower/upper evaluation points for a central difference of width h around tau,
/// clamped to [0, 1].
[[nodiscard]] inline std::pair<double, double> central_difference_taus(double tau, double h) {
  require(h > 0.0, ErrorKind::Config, "finite-difference step must be positive");
  return {std::clamp(tau - 0.5 * h, 0.0, 1.0), std::clamp(tau + 0.5 * h, 0.0, 1.0)};
}

/// max(0, max_i -(upper_i - lower_i) / width_i): the steepest estimated decrease
/// over every (sample, tau) pair. The gradient flows to the maximizing pair only.
[[nodiscard]] inline DerivativePenaltyGrad derivative_penalty_grad(std::span<const double> lower,
                                                                   std::span<const double> upper,
                                                                   std::span<const double> widths) {
  require(!lower.empty(), ErrorKind::Usage, "empty batch");
  require(lower.size() == upper.size() && lower.size() == widths.size(), ErrorKind::Dimension,
          "derivative penalty inputs must have equal length");
  DerivativePenaltyGrad out{0.0, std::vector<double>(lower.size(), 0.0), std::vector<double>(lower.size(), 0.0)};
  std::size_t arg = lower.size();
  for (std::size_t i = 0; i < lower.size(); ++i) {
    require(widths[i] > 0.0, ErrorKind::Config, "finite-difference width must be positive");
    const double negative_slope = -(upper[i] - lower[i]) / widths[i];
    if (negative_slope > out.value) {
      out.value = negative_slope;
      arg = i;
    }
  }
  if (arg < lower.size()) {
    out.grad_lower[arg] = 1.0 / widths[arg];
    out.grad_upper[arg] = -1.0 / widths[arg];
  }
  return out;
}

[[nodiscard]] inline double derivative_penalty(std::span<const double> lower, std::span<const double> upper,
                                               std::span<const double> widths) {
  return derivative_penalty_grad(lower, upper, widths).value;
}

struct GaussianNllGrad {
  double value = 0.0;
  std::vector<double> grad_mu;
  std::vector<double> grad_sigma;
};

/// Sum over the batch of log(2 pi sigma^2)/2 + (y - mu)^2 / (2 sigma^2).
[[nodiscard]] inline GaussianNllGrad gaussian_nll_grad(std::span<const double> y, std::span<const double> mu,
                                                       std::span<const double> sigma) {
  require(y.size() == mu.size() && y.size() == sigma.size(), ErrorKind::Dimension,
          "gaussian_nll inputs must have equal length");
  GaussianNllGrad out{0.0, std::vector<double>(y.size()), std::vector<double>(y.size())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(sigma[i] > 0.0)) fail(ErrorKind::Numeric, "gaussian_nll requires sigma > 0");
    const double r = y[i] - mu[i];
    const double s2 = sigma[i] * sigma[i];
    out.value += 0.5 * std::log(2.0 * std::numbers::pi * s2) + r * r / (2.0 * s2);
    out.grad_mu[i] = -r / s2;
    out.grad_sigma[i] = 1.0 / sigma[i] - r * r / (s2 * sigma[i]);
  }
  return out;
}

[[nodiscard]] inline double gaussian_nll(std::span<const double> y, std::span<const double> mu,
                                         std::span<const double> sigma) {
  return gaussian_nll_grad(y, mu, sigma).value;
}

}  // namespace chebqr
