#pragma once

// Quantile model families behind one interface:
//   ChebQR     phi_w(x) -> d positive values at the Chebyshev roots, integrated in
//              coefficient space; K_w(x) fixes the constant (Q0 or Mean mode).
//   NAM        phi_w(t, x) integrated by Clenshaw-Curtis quadrature on [0, tau].
//   IQN, PCDN  psi(tau, x), optionally with an anti-crossing penalty (IQN).
//   NormalHet  mu(x) + sigma(x) sqrt(2) erfinv(2 tau - 1).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <nlohmann/json.hpp>

#include "chebqr/cheb.hpp"
#include "chebqr/error.hpp"
#include "chebqr/losses.hpp"
#include "chebqr/matrix.hpp"
#include "chebqr/nnet.hpp"
#include "chebqr/random.hpp"

namespace chebqr {

enum class Family { ChebQR, NAM, IQN, PCDN, NormalHet };
enum class PenaltyKind { None, Crossing, Derivative };

struct ModelSpec {
  Family family = Family::ChebQR;
  std::size_t input_dim = 1;
  /// ChebQR: number of roots d. NAM: quadrature degree (even).
  std::size_t degree = 64;
  ConstantMode constant_mode = ConstantMode::Q0;
  IntegrationLength integration = IntegrationLength::Extended;
  EndpointRule endpoint_rule = EndpointRule::Halved;
  PenaltyKind penalty = PenaltyKind::None;
  double penalty_weight = 1.0;
  double fd_step = 1e-3;
  double monotone_fraction = 0.5;
  /// Hidden widths of each sub-network (phi_w and K_w each get this list).
  std::vector<std::size_t> hidden{200};
  Activation hidden_activation = Activation::ReLU;
};

/// CLI-facing model names.
[[nodiscard]] inline std::string model_name(const ModelSpec& spec) {
  switch (spec.family) {
    case Family::ChebQR: return spec.constant_mode == ConstantMode::Q0 ? "ours-q0" : "ours-mean";
    case Family::NAM: return "nam";
    case Family::IQN:
      if (spec.penalty == PenaltyKind::Crossing) return "iqn-p";
      if (spec.penalty == PenaltyKind::Derivative) return "iqn-d";
      return "iqn";
    case Family::PCDN: return "pcdn";
    case Family::NormalHet: return "normal";
  }
  return "unknown";
}

/// Applies a CLI model name to `spec` (family, mode, penalty).
inline void apply_model_name(ModelSpec& spec, const std::string& name) {
  spec.penalty = PenaltyKind::None;
  if (name == "ours-q0") {
    spec.family = Family::ChebQR;
    spec.constant_mode = ConstantMode::Q0;
  } else if (name == "ours-mean") {
    spec.family = Family::ChebQR;
    spec.constant_mode = ConstantMode::Mean;
  } else if (name == "nam") {
    spec.family = Family::NAM;
  } else if (name == "iqn") {
    spec.family = Family::IQN;
  } else if (name == "iqn-p") {
    spec.family = Family::IQN;
    spec.penalty = PenaltyKind::Crossing;
  } else if (name == "iqn-d") {
    spec.family = Family::IQN;
    spec.penalty = PenaltyKind::Derivative;
  } else if (name == "pcdn") {
    spec.family = Family::PCDN;
  } else if (name == "normal") {
    spec.family = Family::NormalHet;
  } else {
    fail(ErrorKind::Config, "unknown model '" + name + "' (ours-q0, ours-mean, nam, iqn, iqn-p, iqn-d, pcdn, normal)");
  }
}

[[nodiscard]] inline bool has_constant_network(Family f) { return f == Family::ChebQR || f == Family::NAM; }

// ---------------------------------------------------------------------------
// Chebyshev coefficient pipeline

struct ChebCoefficients {
  /// Network outputs o_k = phi_w(t_k; x), one row per sample.
  Matrix values;
  /// Derivative series c, n x d.
  Matrix derivative;
  /// Integrated series C, n x (d+1) (or n x d when truncated).
  Matrix integrated;
  std::vector<double> constants;
};

/// Root values -> DCT-II -> integration with constant K, row by row.
[[nodiscard]] inline ChebCoefficients cheb_cs_from_values(const ChebGrid& grid, Matrix values,
                                                          std::span<const double> constants, ConstantMode mode,
                                                          IntegrationLength length = IntegrationLength::Extended) {
  const std::size_t d = grid.degree;
  require(values.cols() == d, ErrorKind::Dimension,
          "derivative network must output " + std::to_string(d) + " values, got " + std::to_string(values.cols()));
  require(constants.size() == values.rows(), ErrorKind::Dimension, "one constant per row required");
  ChebCoefficients out;
  out.derivative = Matrix(values.rows(), d);
  out.integrated = Matrix(values.rows(), integrated_length(d, length));
  out.constants.assign(constants.begin(), constants.end());
  for (std::size_t i = 0; i < values.rows(); ++i) {
    for (double v : values.row(i)) require(std::isfinite(v), ErrorKind::Numeric, "non-finite derivative value");
    require(std::isfinite(constants[i]), ErrorKind::Numeric, "non-finite constant of integration");
    values_to_coeffs(grid, values.row(i), out.derivative.row(i));
    integrate_coeffs(out.derivative.row(i), constants[i], mode, out.integrated.row(i));
  }
  out.values = std::move(values);
  return out;
}

/// Runs phi_w and K_w on a batch and builds both coefficient sets.
[[nodiscard]] inline ChebCoefficients cheb_cs(const Matrix& x, const ChebGrid& grid, const Network& derivative_net,
                                              const Network& constant_net, ConstantMode mode,
                                              IntegrationLength length = IntegrationLength::Extended,
                                              ForwardCache* derivative_cache = nullptr,
                                              ForwardCache* constant_cache = nullptr) {
  Matrix values = forward(derivative_net, x, derivative_cache);
  const Matrix k = forward(constant_net, x, constant_cache);
  require(k.cols() == 1, ErrorKind::Dimension, "constant network must have one output");
  return cheb_cs_from_values(grid, std::move(values), k.data(), mode, length);
}

// ---------------------------------------------------------------------------
// Model variants

struct ChebQRModel {
  Network derivative;
  Network constant;
  ChebGrid grid;
};

struct NAMModel {
  Network derivative;  // inputs [t, x]
  Network constant;
  std::vector<double> weights;      // quadrature weights w_k
  std::vector<double> node_cosines;  // cos(pi k / d)
};

struct ImplicitModel {
  Network psi;  // inputs [tau, x]
};

struct NormalModel {
  Network net;  // outputs [mu, sigma]
};

struct QuantilePrediction {
  std::vector<double> taus;
  Matrix values;
  std::optional<Matrix> derivative_values;
};

namespace detail {

/// Rows [tau_j, x_i] for every i in [row_begin, row_end) and every tau.
inline Matrix tau_inputs(const Matrix& x, std::size_t row_begin, std::size_t row_end, std::span<const double> taus) {
  Matrix in((row_end - row_begin) * taus.size(), x.cols() + 1);
  std::size_t r = 0;
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const auto xi = x.row(i);
    for (double t : taus) {
      auto row = in.row(r++);
      row[0] = t;
      std::copy(xi.begin(), xi.end(), row.begin() + 1);
    }
  }
  return in;
}

inline void check_taus(std::span<const double> taus) {
  for (double t : taus) check_tau(t);
}

}  // namespace detail

class QuantileModel {
 public:
  using Variant = std::variant<ChebQRModel, NAMModel, ImplicitModel, NormalModel>;

  QuantileModel(ModelSpec spec, Variant impl) : spec_(std::move(spec)), impl_(std::move(impl)) {}

  /// Builds and initializes the networks for `spec` from derive_seed(seed, init).
  [[nodiscard]] static QuantileModel create(const ModelSpec& spec, std::uint64_t seed) {
    QuantileModel model(spec, build(spec));
    Rng rng(derive_seed(seed, stream::init));
    for (Network* net : model.networks()) initialize(*net, rng);
    return model;
  }

  /// Networks of `spec` with zero parameters, ready to receive a checkpoint.
  [[nodiscard]] static Variant build(const ModelSpec& spec) {
    require(spec.input_dim >= 1, ErrorKind::Config, "input dimension must be positive");
    const std::size_t D = spec.input_dim;
    switch (spec.family) {
      case Family::ChebQR: {
        require(spec.degree >= 1, ErrorKind::InvalidDegree, "ChebQR degree must be >= 1");
        return ChebQRModel{
            make_mlp(D, spec.hidden, spec.degree, spec.hidden_activation, OutputTransform::ShiftedSoftplus),
            make_mlp(D, spec.hidden, 1, spec.hidden_activation), make_grid(spec.degree)};
      }
      case Family::NAM: {
        check_cc_degree(spec.degree);
        NAMModel nam{make_mlp(D + 1, spec.hidden, 1, spec.hidden_activation, OutputTransform::ShiftedSoftplus),
                     make_mlp(D, spec.hidden, 1, spec.hidden_activation), cc_weights(spec.degree, spec.endpoint_rule),
                     {}};
        for (std::size_t k = 0; k <= spec.degree; ++k) {
          nam.node_cosines.push_back(
              std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.degree)));
        }
        return nam;
      }
      case Family::IQN: return ImplicitModel{make_mlp(D + 1, spec.hidden, 1, spec.hidden_activation)};
      case Family::PCDN: return ImplicitModel{build_pcdn(D, spec.hidden, spec.monotone_fraction)};
      case Family::NormalHet: {
        Network net = make_mlp(D, spec.hidden, 2, spec.hidden_activation, OutputTransform::ShiftedSoftplus);
        net.transform_begin = 1;
        return NormalModel{std::move(net)};
      }
    }
    fail(ErrorKind::Config, "unknown model family");
  }

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] Family family() const noexcept { return spec_.family; }
  [[nodiscard]] const Variant& impl() const noexcept { return impl_; }
  [[nodiscard]] Variant& impl() noexcept { return impl_; }

  [[nodiscard]] std::vector<Network*> networks() {
    return std::visit(
        [](auto& m) -> std::vector<Network*> {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, ChebQRModel> || std::is_same_v<T, NAMModel>) {
            return {&m.derivative, &m.constant};
          } else if constexpr (std::is_same_v<T, ImplicitModel>) {
            return {&m.psi};
          } else {
            return {&m.net};
          }
        },
        impl_);
  }

  [[nodiscard]] std::vector<const Network*> networks() const {
    auto nets = const_cast<QuantileModel*>(this)->networks();
    return {nets.begin(), nets.end()};
  }

  [[nodiscard]] const ChebQRModel& chebqr() const {
    require(std::holds_alternative<ChebQRModel>(impl_), ErrorKind::Usage, "operation requires a ChebQR model");
    return std::get<ChebQRModel>(impl_);
  }

  /// Coefficient sets for each row of x (ChebQR only).
  [[nodiscard]] ChebCoefficients coefficients(const Matrix& x) const {
    const auto& m = chebqr();
    return cheb_cs(x, m.grid, m.derivative, m.constant, spec_.constant_mode, spec_.integration);
  }

  /// q(tau_j; x_i) for every row and tau; result is n x q.
  [[nodiscard]] Matrix predict(const Matrix& x, std::span<const double> taus) const {
    return predict_quantiles(x, taus, false).values;
  }

  [[nodiscard]] QuantilePrediction predict_quantiles(const Matrix& x, std::span<const double> taus,
                                                     bool with_derivative = false) const {
    detail::check_taus(taus);
    QuantilePrediction out{{taus.begin(), taus.end()}, Matrix(x.rows(), taus.size()), std::nullopt};
    std::visit([&](const auto& m) { predict_impl(m, x, taus, with_derivative, out); }, impl_);
    return out;
  }

  /// Training objective on a batch and its gradient for each network (same
  /// order as networks()). `taus` is n x N_tau (ignored by NormalHet).
  double loss_and_gradients(const Matrix& x, std::span<const double> y, const Matrix& taus,
                            std::vector<NetworkGradients>& grads) const {
    require(x.rows() == y.size(), ErrorKind::Dimension, "feature and target counts differ");
    require(x.rows() >= 1, ErrorKind::Usage, "empty batch");
    return std::visit([&](const auto& m) { return loss_impl(m, x, y, taus, grads); }, impl_);
  }

 private:
  // -- ChebQR ---------------------------------------------------------------
  void predict_impl(const ChebQRModel& m, const Matrix& x, std::span<const double> taus, bool with_derivative,
                    QuantilePrediction& out) const {
    const auto cs = cheb_cs(x, m.grid, m.derivative, m.constant, spec_.constant_mode, spec_.integration);
    out.values = eval_batch(cs.integrated, taus);
    if (with_derivative) out.derivative_values = eval_batch(cs.derivative, taus);
  }

  double loss_impl(const ChebQRModel& m, const Matrix& x, std::span<const double> y, const Matrix& taus,
                   std::vector<NetworkGradients>& grads) const {
    require(taus.rows() == x.rows() && taus.cols() >= 1, ErrorKind::Dimension, "tau sample must be n x N_tau");
    ForwardCache dcache;
    ForwardCache kcache;
    const auto cs = cheb_cs(x, m.grid, m.derivative, m.constant, spec_.constant_mode, spec_.integration, &dcache,
                            &kcache);
    const std::size_t n = x.rows();
    const std::size_t d = m.grid.degree;
    const std::size_t len = cs.integrated.cols();
    const double scale = 1.0 / static_cast<double>(n * taus.cols());
    Matrix grad_values(n, d);
    Matrix grad_constant(n, 1);
    std::vector<double> basis(len);
    std::vector<double> grad_C(len);
    std::vector<double> grad_c(d);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto C = cs.integrated.row(i);
      std::fill(grad_C.begin(), grad_C.end(), 0.0);
      for (std::size_t s = 0; s < taus.cols(); ++s) {
        const double tau = taus(i, s);
        const double q = eval_cheb(C, tau);
        loss += pinball(y[i], q, tau);
        const double g = scale * pinball_grad(y[i], q, tau);
        cheb_basis(tau, basis);
        for (std::size_t k = 0; k < len; ++k) grad_C[k] += g * basis[k];
      }
      grad_constant(i, 0) = integrate_coeffs_adjoint(grad_C, spec_.constant_mode, grad_c);
      values_to_coeffs_adjoint(m.grid, grad_c, grad_values.row(i));
    }
    grads.clear();
    grads.push_back(backward(m.derivative, dcache, grad_values));
    grads.push_back(backward(m.constant, kcache, grad_constant));
    return loss * scale;
  }

  // -- NAM ------------------------------------------------------------------
  /// Inputs [t_k(tau), x_i] for one row and the given taus, nodes k = 0..d.
  Matrix nam_inputs(const NAMModel& m, std::span<const double> xi, std::span<const double> taus) const {
    const std::size_t nodes = m.node_cosines.size();
    Matrix in(taus.size() * nodes, xi.size() + 1);
    std::size_t r = 0;
    for (double tau : taus) {
      for (std::size_t k = 0; k < nodes; ++k) {
        auto row = in.row(r++);
        double t = 0.5 * tau * m.node_cosines[k] + 0.5 * tau;
        if (k == 0) t = tau;
        if (k + 1 == nodes) t = 0.0;
        row[0] = t;
        std::copy(xi.begin(), xi.end(), row.begin() + 1);
      }
    }
    return in;
  }

  void predict_impl(const NAMModel& m, const Matrix& x, std::span<const double> taus, bool with_derivative,
                    QuantilePrediction& out) const {
    const Matrix k = forward(m.constant, x);
    const std::size_t nodes = m.node_cosines.size();
    if (with_derivative) out.derivative_values = Matrix(x.rows(), taus.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const Matrix phi = forward(m.derivative, nam_inputs(m, x.row(i), taus));
      for (std::size_t j = 0; j < taus.size(); ++j) {
        double acc = 0.0;
        for (std::size_t node = 0; node < nodes; ++node) acc += m.weights[node] * phi(j * nodes + node, 0);
        out.values(i, j) = taus[j] * acc + k(i, 0);
        // The node at k = 0 sits at t = tau.
        if (with_derivative) (*out.derivative_values)(i, j) = phi(j * nodes, 0);
      }
    }
  }

  double loss_impl(const NAMModel& m, const Matrix& x, std::span<const double> y, const Matrix& taus,
                   std::vector<NetworkGradients>& grads) const {
    require(taus.rows() == x.rows() && taus.cols() >= 1, ErrorKind::Dimension, "tau sample must be n x N_tau");
    const std::size_t n = x.rows();
    const std::size_t nt = taus.cols();
    const std::size_t nodes = m.node_cosines.size();
    Matrix in(n * nt * nodes, x.cols() + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Matrix block = nam_inputs(m, x.row(i), taus.row(i));
      std::copy(block.data().begin(), block.data().end(),
                in.data().begin() + static_cast<std::ptrdiff_t>(i * nt * nodes * in.cols()));
    }
    ForwardCache dcache;
    ForwardCache kcache;
    const Matrix phi = forward(m.derivative, in, &dcache);
    const Matrix k = forward(m.constant, x, &kcache);
    const double scale = 1.0 / static_cast<double>(n * nt);
    Matrix grad_phi(phi.rows(), 1);
    Matrix grad_k(n, 1);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < nt; ++s) {
        const double tau = taus(i, s);
        const std::size_t base = (i * nt + s) * nodes;
        double acc = 0.0;
        for (std::size_t node = 0; node < nodes; ++node) acc += m.weights[node] * phi(base + node, 0);
        const double q = tau * acc + k(i, 0);
        loss += pinball(y[i], q, tau);
        const double g = scale * pinball_grad(y[i], q, tau);
        grad_k(i, 0) += g;
        for (std::size_t node = 0; node < nodes; ++node) grad_phi(base + node, 0) = g * tau * m.weights[node];
      }
    }
    grads.clear();
    grads.push_back(backward(m.derivative, dcache, grad_phi));
    grads.push_back(backward(m.constant, kcache, grad_k));
    return loss * scale;
  }

  // -- IQN / PCDN -----------------------------------------------------------
  void predict_impl(const ImplicitModel& m, const Matrix& x, std::span<const double> taus, bool with_derivative,
                    QuantilePrediction& out) const {
    const std::size_t q = taus.size();
    // Bound memory by evaluating blocks of rows.
    const std::size_t block = std::max<std::size_t>(1, 65536 / std::max<std::size_t>(q, 1));
    for (std::size_t begin = 0; begin < x.rows(); begin += block) {
      const std::size_t end = std::min(x.rows(), begin + block);
      const Matrix psi = forward(m.psi, detail::tau_inputs(x, begin, end, taus));
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < q; ++j) out.values(i, j) = psi((i - begin) * q + j, 0);
      }
    }
    if (with_derivative) {
      std::vector<double> lo(q), hi(q);
      for (std::size_t j = 0; j < q; ++j) std::tie(lo[j], hi[j]) = central_difference_taus(taus[j], spec_.fd_step);
      const Matrix plo = predict(x, lo);
      const Matrix phi = predict(x, hi);
      out.derivative_values = Matrix(x.rows(), q);
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < q; ++j) (*out.derivative_values)(i, j) = (phi(i, j) - plo(i, j)) / (hi[j] - lo[j]);
      }
    }
  }

  double loss_impl(const ImplicitModel& m, const Matrix& x, std::span<const double> y, const Matrix& taus,
                   std::vector<NetworkGradients>& grads) const {
    require(taus.rows() == x.rows() && taus.cols() >= 1, ErrorKind::Dimension, "tau sample must be n x N_tau");
    const std::size_t n = x.rows();
    const std::size_t nt = taus.cols();
    Matrix in(n * nt, x.cols() + 1);
    std::vector<double> flat_taus(n * nt);
    std::vector<double> flat_y(n * nt);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < nt; ++s) {
        auto row = in.row(i * nt + s);
        row[0] = taus(i, s);
        std::copy(x.row(i).begin(), x.row(i).end(), row.begin() + 1);
        flat_taus[i * nt + s] = taus(i, s);
        flat_y[i * nt + s] = y[i];
      }
    }
    ForwardCache cache;
    const Matrix psi = forward(m.psi, in, &cache);
    auto mc = mc_quantile_loss_grad(psi.data(), flat_y, flat_taus);
    double loss = mc.value;
    Matrix grad_psi(n * nt, 1, std::move(mc.grad));
    grads.clear();

    if (spec_.penalty == PenaltyKind::Crossing && nt >= 2) {
      // Adjacent pairs of each row's sorted tau sample.
      Matrix sorted(n, nt);
      std::vector<std::vector<std::size_t>> order(n);
      for (std::size_t i = 0; i < n; ++i) {
        order[i].resize(nt);
        std::iota(order[i].begin(), order[i].end(), 0);
        std::stable_sort(order[i].begin(), order[i].end(),
                         [&](std::size_t a, std::size_t b) { return taus(i, a) < taus(i, b); });
        for (std::size_t j = 0; j < nt; ++j) sorted(i, j) = psi(i * nt + order[i][j], 0);
      }
      const auto pen = crossing_penalty_grad(sorted);
      loss += spec_.penalty_weight * pen.value;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nt; ++j) grad_psi(i * nt + order[i][j], 0) += spec_.penalty_weight * pen.grad(i, j);
      }
    }
    grads.push_back(backward(m.psi, cache, grad_psi));

    if (spec_.penalty == PenaltyKind::Derivative) {
      const std::size_t rows = n * nt;
      Matrix fd_in(2 * rows, x.cols() + 1);
      std::vector<double> widths(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto [lo, hi] = central_difference_taus(flat_taus[r], spec_.fd_step);
        widths[r] = hi - lo;
        auto lrow = fd_in.row(r);
        auto hrow = fd_in.row(rows + r);
        std::copy(in.row(r).begin(), in.row(r).end(), lrow.begin());
        std::copy(in.row(r).begin(), in.row(r).end(), hrow.begin());
        lrow[0] = lo;
        hrow[0] = hi;
      }
      ForwardCache fd_cache;
      const Matrix fd = forward(m.psi, fd_in, &fd_cache);
      const std::span<const double> all(fd.data());
      const auto pen = derivative_penalty_grad(all.subspan(0, rows), all.subspan(rows, rows), widths);
      loss += spec_.penalty_weight * pen.value;
      Matrix grad_fd(2 * rows, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        grad_fd(r, 0) = spec_.penalty_weight * pen.grad_lower[r];
        grad_fd(rows + r, 0) = spec_.penalty_weight * pen.grad_upper[r];
      }
      grads.front() += backward(m.psi, fd_cache, grad_fd);
    }
    return loss;
  }

  // -- NormalHet ------------------------------------------------------------
  void predict_impl(const NormalModel& m, const Matrix& x, std::span<const double> taus, bool with_derivative,
                    QuantilePrediction& out) const {
    for (double t : taus) {
      if (!(t > 0.0 && t < 1.0)) fail(ErrorKind::Domain, "normal quantile at tau " + std::to_string(t) + " is infinite");
    }
    const Matrix head = forward(m.net, x);
    std::vector<double> z(taus.size());
    for (std::size_t j = 0; j < taus.size(); ++j) z[j] = std::sqrt(2.0) * boost::math::erf_inv(2.0 * taus[j] - 1.0);
    if (with_derivative) out.derivative_values = Matrix(x.rows(), taus.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < taus.size(); ++j) {
        out.values(i, j) = head(i, 0) + head(i, 1) * z[j];
        if (with_derivative) {
          // dq/dtau = sigma / pdf(z)
          const double pdf = std::exp(-0.5 * z[j] * z[j]) / std::sqrt(2.0 * std::numbers::pi);
          (*out.derivative_values)(i, j) = head(i, 1) / pdf;
        }
      }
    }
  }

  double loss_impl(const NormalModel& m, const Matrix& x, std::span<const double> y, const Matrix& /*taus*/,
                   std::vector<NetworkGradients>& grads) const {
    ForwardCache cache;
    const Matrix head = forward(m.net, x, &cache);
    const std::size_t n = x.rows();
    std::vector<double> mu(n), sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
      mu[i] = head(i, 0);
      sigma[i] = head(i, 1);
    }
    const auto nll = gaussian_nll_grad(y, mu, sigma);
    const double scale = 1.0 / static_cast<double>(n);
    Matrix grad(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      grad(i, 0) = scale * nll.grad_mu[i];
      grad(i, 1) = scale * nll.grad_sigma[i];
    }
    grads.clear();
    grads.push_back(backward(m.net, cache, grad));
    return nll.value * scale;
  }

  ModelSpec spec_;
  Variant impl_;
};

// ---------------------------------------------------------------------------
// Validation objective

/// Taus used for deterministic validation: 0.05, 0.15, ..., 0.95.
[[nodiscard]] inline std::vector<double> validation_taus() {
  std::vector<double> taus;
  for (int j = 0; j < 10; ++j) taus.push_back((j + 0.5) / 10.0);
  return taus;
}

/// Mean pinball over `taus` for all rows.
[[nodiscard]] inline double mean_pinball(const QuantileModel& model, const Matrix& x, std::span<const double> y,
                                         std::span<const double> taus) {
  const Matrix q = model.predict(x, taus);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < taus.size(); ++j) sum += pinball(y[i], q(i, j), taus[j]);
  }
  return sum / static_cast<double>(x.rows() * taus.size());
}

/// Validation objective used for early stopping: mean Gaussian NLL for
/// NormalHet, mean pinball over validation_taus() otherwise.
[[nodiscard]] inline double validation_loss(const QuantileModel& model, const Matrix& x, std::span<const double> y) {
  if (model.family() == Family::NormalHet) {
    const auto& m = std::get<NormalModel>(model.impl());
    const Matrix head = forward(m.net, x);
    std::vector<double> mu(x.rows()), sigma(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      mu[i] = head(i, 0);
      sigma[i] = head(i, 1);
    }
    return gaussian_nll(y, mu, sigma) / static_cast<double>(x.rows());
  }
  const auto taus = validation_taus();
  return mean_pinball(model, x, y, taus);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 2000;
  std::size_t patience = 200;
  std::size_t batch_size = 128;
  std::size_t n_tau = 8;
  AdamConfig adam{};
  std::uint64_t seed = 0;
};

struct EpochRecord {
  /// Epoch 0 is the untrained model.
  std::size_t epoch = 0;
  /// Mean training objective over the epoch's batches (epoch 0: validation
  /// objective evaluated on the training rows).
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_pinball_median = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Minimizes the family's objective with Adam on shuffled mini-batches, a fresh
/// uniform tau sample per batch, and early stopping on validation_loss. The
/// best-validation parameters are restored before returning.
inline TrainingHistory train(QuantileModel& model, const Matrix& x_train, std::span<const double> y_train,
                             const Matrix& x_val, std::span<const double> y_val, const TrainConfig& config,
                             const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  require(x_train.rows() == y_train.size() && x_val.rows() == y_val.size(), ErrorKind::Dimension,
          "feature and target counts differ");
  require(x_train.rows() >= 1 && x_val.rows() >= 1, ErrorKind::Data, "train and validation splits must be non-empty");
  require(config.batch_size >= 1 && config.n_tau >= 1, ErrorKind::Config, "batch size and N_tau must be positive");

  Rng shuffle_rng(derive_seed(config.seed, stream::shuffle));
  Rng tau_rng(derive_seed(config.seed, stream::tau));
  AdamState adam(config.adam);
  const std::vector<double> median{0.5};

  auto snapshot = [&] {
    std::vector<Network> copy;
    for (const Network* net : std::as_const(model).networks()) copy.push_back(*net);
    return copy;
  };
  auto check = [](double v, std::size_t epoch) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "training diverged: non-finite loss at epoch " + std::to_string(epoch));
  };

  TrainingHistory history;
  EpochRecord initial{0, validation_loss(model, x_train, y_train), validation_loss(model, x_val, y_val),
                      mean_pinball(model, x_val, y_val, median)};
  check(initial.val_loss, 0);
  history.records.push_back(initial);
  history.best_val_loss = initial.val_loss;
  auto best = snapshot();
  if (on_epoch) on_epoch(initial);

  std::vector<std::size_t> order(x_train.rows());
  std::iota(order.begin(), order.end(), 0);
  std::vector<NetworkGradients> grads;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix xb = select_rows(x_train, idx);
      const auto yb = select<double>(y_train, idx);
      Matrix taus(idx.size(), config.n_tau);
      for (auto& t : taus.data()) t = tau_rng.uniform_open();

      const double loss = model.loss_and_gradients(xb, yb, taus, grads);
      check(loss, epoch);
      epoch_loss += loss;
      ++batches;

      auto nets = model.networks();
      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> grad_blocks;
      for (std::size_t k = 0; k < nets.size(); ++k) {
        for (auto b : nets[k]->parameter_blocks()) params.push_back(b);
        for (auto b : grads[k].blocks()) grad_blocks.push_back(b);
      }
      adam.step(params, grad_blocks);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(batches), validation_loss(model, x_val, y_val),
                    mean_pinball(model, x_val, y_val, median)};
    check(rec.val_loss, epoch);
    history.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < history.best_val_loss) {
      history.best_val_loss = rec.val_loss;
      history.best_epoch = epoch;
      best = snapshot();
    } else if (epoch - history.best_epoch >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }
  auto nets = model.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) *nets[k] = best[k];
  return history;
}

// ---------------------------------------------------------------------------
// Inversion

struct InversionResult {
  double tau = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
};

/// Solves P(tau) = y on [0, 1] for the series `integrated` with derivative
/// series `derivative`: Newton from tau = 0.5, falling back to bisection of the
/// maintained bracket when a step leaves it or |p| < 1e-12.
[[nodiscard]] inline InversionResult invert_series(std::span<const double> integrated,
                                                   std::span<const double> derivative, double y, double tol = 1e-10,
                                                   std::size_t max_iter = 50) {
  require(tol > 0.0, ErrorKind::Config, "inversion tolerance must be positive");
  const double p0 = eval_cheb(integrated, 0.0);
  const double p1 = eval_cheb(integrated, 1.0);
  if (!(y >= p0 && y <= p1)) throw OutOfSupportError(y, p0, p1);
  if (std::abs(p0 - y) <= tol) return {0.0, std::abs(p0 - y), 0};
  if (std::abs(p1 - y) <= tol) return {1.0, std::abs(p1 - y), 0};

  double lo = 0.0;
  double hi = 1.0;
  double tau = 0.5;
  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    const double f = eval_cheb(integrated, tau) - y;
    if (std::abs(f) <= tol) return {tau, std::abs(f), iter - 1};
    if (f < 0.0) lo = tau;
    else hi = tau;
    const double slope = eval_cheb(derivative, tau);
    const double newton = std::abs(slope) < 1e-12 ? std::numeric_limits<double>::quiet_NaN() : tau - f / slope;
    tau = (newton > lo && newton < hi) ? newton : 0.5 * (lo + hi);
  }
  const double f = eval_cheb(integrated, tau) - y;
  if (std::abs(f) <= tol) return {tau, std::abs(f), max_iter};
  fail(ErrorKind::Convergence, "inversion did not reach tolerance within " + std::to_string(max_iter) + " iterations");
}

/// tau* with P(tau*; x) = y for one feature row (ChebQR only).
[[nodiscard]] inline InversionResult invert(const QuantileModel& model, std::span<const double> x_row, double y,
                                            double tol = 1e-10, std::size_t max_iter = 50) {
  Matrix x(1, x_row.size(), std::vector<double>(x_row.begin(), x_row.end()));
  const auto cs = model.coefficients(x);
  return invert_series(cs.integrated.row(0), cs.derivative.row(0), y, tol, max_iter);
}

// ---------------------------------------------------------------------------
// Serialization

[[nodiscard]] inline nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["model"] = model_name(s);
  j["input_dim"] = s.input_dim;
  j["degree"] = s.degree;
  j["integration"] = s.integration == IntegrationLength::Extended ? "extended" : "truncate-to-d";
  j["nam_endpoints"] = s.endpoint_rule == EndpointRule::Halved ? "halved" : "as-printed";
  j["penalty_weight"] = s.penalty_weight;
  j["fd_step"] = s.fd_step;
  j["monotone_fraction"] = s.monotone_fraction;
  j["hidden"] = s.hidden;
  j["hidden_activation"] = to_string(s.hidden_activation);
  return j;
}

[[nodiscard]] inline ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    apply_model_name(s, j.at("model").get<std::string>());
    s.input_dim = j.at("input_dim");
    s.degree = j.at("degree");
    s.integration = j.at("integration") == "extended" ? IntegrationLength::Extended : IntegrationLength::TruncateToD;
    s.endpoint_rule = j.at("nam_endpoints") == "halved" ? EndpointRule::Halved : EndpointRule::AsPrinted;
    s.penalty_weight = j.at("penalty_weight");
    s.fd_step = j.at("fd_step");
    s.monotone_fraction = j.at("monotone_fraction");
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.hidden_activation = parse_activation(j.at("hidden_activation").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed model spec: ") + e.what());
  }
}

/// Full model: spec plus every network.
[[nodiscard]] inline nlohmann::json model_to_json(const QuantileModel& model) {
  nlohmann::json j;
  j["format"] = "chebqr-model";
  j["version"] = 1;
  j["spec"] = spec_to_json(model.spec());
  auto nets = nlohmann::json::array();
  for (const Network* net : model.networks()) nets.push_back(network_to_json(*net));
  j["networks"] = std::move(nets);
  return j;
}

[[nodiscard]] inline QuantileModel model_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format") == "chebqr-model", ErrorKind::Data, "not a chebqr-model checkpoint");
    QuantileModel model(spec_from_json(j.at("spec")), QuantileModel::build(spec_from_json(j.at("spec"))));
    auto nets = model.networks();
    const auto& stored = j.at("networks");
    require(stored.size() == nets.size(), ErrorKind::Data, "checkpoint network count does not match the model family");
    for (std::size_t k = 0; k < nets.size(); ++k) {
      Network loaded = network_from_json(stored[k]);
      require(loaded.layers.size() == nets[k]->layers.size() && loaded.in_dim() == nets[k]->in_dim() &&
                  loaded.out_dim() == nets[k]->out_dim(),
              ErrorKind::Data, "checkpoint architecture does not match the model spec");
      *nets[k] = std::move(loaded);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed model checkpoint: ") + e.what());
  }
}

}  // namespace chebqr
