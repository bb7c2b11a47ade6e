#pragma once

// Dense networks with reverse-mode gradients, constrained (non-negative)
// weights, connection masks, a positive output head and the Adam optimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chebqr/error.hpp"
#include "chebqr/matrix.hpp"
#include "chebqr/random.hpp"

namespace chebqr {

enum class Activation { Identity, ReLU, Softplus };
enum class WeightConstraint : std::uint8_t { Free = 0, NonNegative = 1 };
enum class OutputTransform { None, ShiftedSoftplus };

/// log(1 + e^z) without overflow.
[[nodiscard]] inline double softplus(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

[[nodiscard]] inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline constexpr double kPositiveFloor = 1e-3;
inline constexpr double kSoftplusShift = 1e-5;

/// 1e-3 + softplus(z + 1e-5), bounded below by 1e-3.
[[nodiscard]] inline double shifted_softplus(double z) noexcept {
  return kPositiveFloor + softplus(z + kSoftplusShift);
}

[[nodiscard]] inline double activate(Activation a, double z) noexcept {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Softplus: return softplus(z);
  }
  return z;
}

/// Derivative with respect to the pre-activation; ReLU'(0) = 0.
[[nodiscard]] inline double activate_grad(Activation a, double z) noexcept {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return sigmoid(z);
  }
  return 1.0;
}

struct DenseLayer {
  Matrix weights;  // in x out
  std::vector<double> bias;
  Activation activation = Activation::ReLU;
  /// Per-weight constraint, row-major like `weights`; empty means all Free.
  std::vector<WeightConstraint> constraints;
  /// Per-weight connection flag (1 connected, 0 absent); empty means dense.
  std::vector<std::uint8_t> mask;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : weights(in, out), bias(out, 0.0), activation(act) {}

  [[nodiscard]] std::size_t in_dim() const noexcept { return weights.rows(); }
  [[nodiscard]] std::size_t out_dim() const noexcept { return weights.cols(); }

  [[nodiscard]] bool connected(std::size_t idx) const noexcept { return mask.empty() || mask[idx] != 0; }
  [[nodiscard]] bool nonnegative(std::size_t idx) const noexcept {
    return !constraints.empty() && constraints[idx] == WeightConstraint::NonNegative;
  }

  /// Weights as used by the forward pass: masked entries are 0, constrained
  /// entries pass through max(0, w).
  [[nodiscard]] Matrix effective_weights() const {
    Matrix eff = weights;
    auto& data = eff.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!connected(i)) {
        data[i] = 0.0;
      } else if (nonnegative(i) && data[i] < 0.0) {
        data[i] = 0.0;
      }
    }
    return eff;
  }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Network {
  std::vector<DenseLayer> layers;
  OutputTransform output_transform = OutputTransform::None;
  /// Output columns >= transform_begin go through output_transform.
  std::size_t transform_begin = 0;

  [[nodiscard]] std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  [[nodiscard]] std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Weight and bias blocks in a fixed order shared with NetworkGradients::blocks.
  [[nodiscard]] std::vector<std::span<double>> parameter_blocks() {
    std::vector<std::span<double>> blocks;
    for (auto& l : layers) {
      blocks.emplace_back(l.weights.data());
      blocks.emplace_back(l.bias);
    }
    return blocks;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

struct ForwardCache {
  /// inputs[l] is the input to layer l.
  std::vector<Matrix> inputs;
  /// pre[l] is the pre-activation output of layer l.
  std::vector<Matrix> pre;
  bool valid = false;
};

struct NetworkGradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
  Matrix input;

  explicit NetworkGradients(const Network& net) {
    for (const auto& l : net.layers) {
      weights.emplace_back(l.in_dim(), l.out_dim());
      bias.emplace_back(l.out_dim(), 0.0);
    }
  }

  [[nodiscard]] std::vector<std::span<const double>> blocks() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(weights[l].data());
      out.emplace_back(bias[l]);
    }
    return out;
  }

  NetworkGradients& operator+=(const NetworkGradients& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      auto& w = weights[l].data();
      const auto& ow = other.weights[l].data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
      for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += other.bias[l][i];
    }
    return *this;
  }
};

namespace detail {

/// out = x * w + bias (broadcast over rows).
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  const std::size_t n = x.rows();
  const std::size_t in = w.rows();
  const std::size_t out_dim = w.cols();
  Matrix out(n, out_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row(i);
    std::copy(bias.begin(), bias.end(), orow.begin());
    const auto xrow = x.row(i);
    for (std::size_t p = 0; p < in; ++p) {
      const double a = xrow[p];
      const auto wrow = w.row(p);
      for (std::size_t j = 0; j < out_dim; ++j) orow[j] += a * wrow[j];
    }
  }
  return out;
}

}  // namespace detail

[[nodiscard]] inline Matrix forward(const Network& net, const Matrix& input, ForwardCache* cache = nullptr) {
  require(!net.layers.empty(), ErrorKind::Usage, "network has no layers");
  require(input.cols() == net.in_dim(), ErrorKind::Dimension,
          "network expects " + std::to_string(net.in_dim()) + " inputs, got " + std::to_string(input.cols()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->valid = false;
  }
  Matrix current = input;
  for (const auto& layer : net.layers) {
    Matrix pre = detail::affine(current, layer.effective_weights(), layer.bias);
    Matrix post = pre;
    for (auto& v : post.data()) v = activate(layer.activation, v);
    if (cache) {
      cache->inputs.push_back(std::move(current));
      cache->pre.push_back(std::move(pre));
    }
    current = std::move(post);
  }
  if (net.output_transform == OutputTransform::ShiftedSoftplus) {
    for (std::size_t i = 0; i < current.rows(); ++i) {
      for (std::size_t j = net.transform_begin; j < current.cols(); ++j) current(i, j) = shifted_softplus(current(i, j));
    }
  }
  for (double v : current.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "network produced a non-finite output");
  }
  if (cache) cache->valid = true;
  return current;
}

/// Reverse pass for the input cached by the preceding forward call. `upstream`
/// is dLoss/dOutput with the output's shape.
[[nodiscard]] inline NetworkGradients backward(const Network& net, const ForwardCache& cache, const Matrix& upstream) {
  require(cache.valid && cache.pre.size() == net.layers.size(), ErrorKind::Usage,
          "backward called without a matching forward cache");
  const Matrix& last_pre = cache.pre.back();
  require(upstream.rows() == last_pre.rows() && upstream.cols() == last_pre.cols(), ErrorKind::Dimension,
          "upstream gradient shape does not match network output");
  NetworkGradients grads(net);
  Matrix delta = upstream;
  if (net.output_transform == OutputTransform::ShiftedSoftplus) {
    // Output = 1e-3 + softplus(act(pre) + 1e-5); the last activation is applied first.
    const auto& layer = net.layers.back();
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      for (std::size_t j = net.transform_begin; j < delta.cols(); ++j) {
        delta(i, j) *= sigmoid(activate(layer.activation, last_pre(i, j)) + kSoftplusShift);
      }
    }
  }
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const Matrix& pre = cache.pre[l];
    const Matrix& x = cache.inputs[l];
    for (std::size_t i = 0; i < delta.size(); ++i) delta.data()[i] *= activate_grad(layer.activation, pre.data()[i]);

    auto& gw = grads.weights[l];
    auto& gb = grads.bias[l];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const auto drow = delta.row(i);
      const auto xrow = x.row(i);
      for (std::size_t j = 0; j < out; ++j) gb[j] += drow[j];
      for (std::size_t p = 0; p < in; ++p) {
        const double a = xrow[p];
        auto grow = gw.row(p);
        for (std::size_t j = 0; j < out; ++j) grow[j] += a * drow[j];
      }
    }
    const Matrix eff = layer.effective_weights();
    // Chain through the reparameterization: absent and clipped weights get zero.
    for (std::size_t idx = 0; idx < gw.size(); ++idx) {
      if (!layer.connected(idx) || (layer.nonnegative(idx) && !(layer.weights.data()[idx] > 0.0))) {
        gw.data()[idx] = 0.0;
      }
    }
    Matrix next(delta.rows(), in);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const auto drow = delta.row(i);
      auto nrow = next.row(i);
      for (std::size_t p = 0; p < in; ++p) {
        const auto wrow = eff.row(p);
        double sum = 0.0;
        for (std::size_t j = 0; j < out; ++j) sum += wrow[j] * drow[j];
        nrow[p] = sum;
      }
    }
    delta = std::move(next);
  }
  grads.input = std::move(delta);
  return grads;
}

// ---------------------------------------------------------------------------
// Construction

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
/// weights and biases. Constrained weights take the absolute value so the
/// max(0, w) path starts active; absent connections are zeroed.
inline void initialize(Network& net, Rng& rng) {
  for (auto& layer : net.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
    auto& w = layer.weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double v = rng.uniform(-bound, bound);
      if (layer.nonnegative(i)) v = std::abs(v);
      w[i] = layer.connected(i) ? v : 0.0;
    }
    for (auto& b : layer.bias) b = rng.uniform(-bound, bound);
  }
}

/// Fully connected network: hidden layers with `hidden_activation`, identity output.
[[nodiscard]] inline Network make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                                      Activation hidden_activation = Activation::ReLU,
                                      OutputTransform transform = OutputTransform::None) {
  require(in >= 1 && out >= 1, ErrorKind::Config, "network dimensions must be positive");
  Network net;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    require(h >= 1, ErrorKind::Config, "hidden layer width must be positive");
    net.layers.emplace_back(prev, h, hidden_activation);
    prev = h;
  }
  net.layers.emplace_back(prev, out, Activation::Identity);
  net.output_transform = transform;
  return net;
}

/// Partially constrained dense network over inputs [tau, x_1..x_D] (tau in
/// column 0). Each hidden layer's first round(fraction * width) neurons are
/// "selected": they see tau (first layer) or the previous selected neurons
/// through non-negative weights, plus x freely in the first layer. Unselected
/// neurons never see tau-dependent inputs. The output is non-decreasing in tau.
[[nodiscard]] inline Network build_pcdn(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        double monotone_fraction) {
  require(monotone_fraction > 0.0 && monotone_fraction < 1.0, ErrorKind::Config,
          "monotone fraction must lie in (0, 1)");
  require(!hidden.empty(), ErrorKind::Config, "PCDN needs at least one hidden layer");
  Network net = make_mlp(input_dim + 1, hidden, 1, Activation::ReLU);

  std::vector<std::size_t> selected;
  for (std::size_t h : hidden) {
    const auto s = static_cast<std::size_t>(std::llround(monotone_fraction * static_cast<double>(h)));
    require(s >= 1, ErrorKind::Config, "monotone fraction selects no neurons in a layer of width " + std::to_string(h));
    selected.push_back(std::min(s, h));
  }

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    layer.constraints.assign(in * out, WeightConstraint::Free);
    layer.mask.assign(in * out, 1);
    const bool first = (l == 0);
    const bool output = (l + 1 == net.layers.size());
    const std::size_t prev_sel = first ? 1 : selected[l - 1];
    for (std::size_t p = 0; p < in; ++p) {
      const bool from_selected = p < prev_sel;  // tau is column 0 of the first layer
      for (std::size_t j = 0; j < out; ++j) {
        const std::size_t idx = p * out + j;
        const bool to_selected = output || j < selected[l];
        if (first) {
          if (from_selected) {
            if (to_selected) layer.constraints[idx] = WeightConstraint::NonNegative;
            else layer.mask[idx] = 0;
          }
        } else if (output) {
          if (from_selected) layer.constraints[idx] = WeightConstraint::NonNegative;
        } else if (from_selected != to_selected) {
          layer.mask[idx] = 0;
        } else if (from_selected) {
          layer.constraints[idx] = WeightConstraint::NonNegative;
        }
      }
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for a fixed list of parameter blocks.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::uint64_t steps() const noexcept { return step_; }

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
    require(params.size() == grads.size(), ErrorKind::Dimension, "parameter and gradient block counts differ");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    require(first_.size() == params.size(), ErrorKind::Dimension, "parameter block count changed between steps");
    ++step_;
    const double t = static_cast<double>(step_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
      require(params[b].size() == grads[b].size() && params[b].size() == first_[b].size(), ErrorKind::Dimension,
              "parameter block size mismatch");
      auto& m = first_[b];
      auto& v = second_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[i] / correction1;
        const double vhat = v[i] / correction2;
        params[b][i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
// JSON document:
//   { "format": "chebqr-network", "version": 1,
//     "output_transform": "none" | "shifted_softplus", "transform_begin": n,
//     "layers": [ { "in": i, "out": o, "activation": "relu" | "softplus" | "identity",
//                   "weights": [i*o doubles, row-major], "bias": [o doubles],
//                   "constraints": [0/1 per weight] (optional), "mask": [0/1 per weight] (optional) } ] }
// Doubles are written in shortest round-trip form, so loading is bit-exact.

[[nodiscard]] inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
  }
  return "identity";
}

[[nodiscard]] inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

[[nodiscard]] inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["format"] = "chebqr-network";
  j["version"] = 1;
  j["output_transform"] = net.output_transform == OutputTransform::ShiftedSoftplus ? "shifted_softplus" : "none";
  j["transform_begin"] = net.transform_begin;
  auto layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json lj;
    lj["in"] = l.in_dim();
    lj["out"] = l.out_dim();
    lj["activation"] = to_string(l.activation);
    lj["weights"] = l.weights.data();
    lj["bias"] = l.bias;
    if (!l.constraints.empty()) {
      std::vector<int> c;
      for (auto v : l.constraints) c.push_back(static_cast<int>(v));
      lj["constraints"] = c;
    }
    if (!l.mask.empty()) lj["mask"] = std::vector<int>(l.mask.begin(), l.mask.end());
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

[[nodiscard]] inline Network network_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format") == "chebqr-network" && j.at("version") == 1, ErrorKind::Data,
            "not a chebqr-network checkpoint");
    Network net;
    const std::string transform = j.at("output_transform");
    net.output_transform = transform == "shifted_softplus" ? OutputTransform::ShiftedSoftplus : OutputTransform::None;
    net.transform_begin = j.at("transform_begin");
    for (const auto& lj : j.at("layers")) {
      DenseLayer layer(lj.at("in").get<std::size_t>(), lj.at("out").get<std::size_t>(),
                       parse_activation(lj.at("activation")));
      auto weights = lj.at("weights").get<std::vector<double>>();
      require(weights.size() == layer.weights.size(), ErrorKind::Data, "checkpoint weight count mismatch");
      layer.weights.data() = std::move(weights);
      layer.bias = lj.at("bias").get<std::vector<double>>();
      require(layer.bias.size() == layer.out_dim(), ErrorKind::Data, "checkpoint bias count mismatch");
      if (lj.contains("constraints")) {
        for (int c : lj["constraints"].get<std::vector<int>>()) layer.constraints.push_back(static_cast<WeightConstraint>(c));
        require(layer.constraints.size() == layer.weights.size(), ErrorKind::Data, "constraint count mismatch");
      }
      if (lj.contains("mask")) {
        for (int m : lj["mask"].get<std::vector<int>>()) layer.mask.push_back(static_cast<std::uint8_t>(m));
        require(layer.mask.size() == layer.weights.size(), ErrorKind::Data, "mask count mismatch");
      }
      if (!net.layers.empty()) {
        require(net.layers.back().out_dim() == layer.in_dim(), ErrorKind::Data, "checkpoint layer sizes do not chain");
      }
      net.layers.push_back(std::move(layer));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed network checkpoint: ") + e.what());
  }
}

}  // namespace chebqr
