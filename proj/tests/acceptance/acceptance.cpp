// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
//
// usage: acceptance <chebqr-cli> <data-dir> <out-dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chebqr/chebqr.hpp"
#include "chebqr/config.hpp"
#include "chebqr/run.hpp"
#include "oracles.hpp"

using namespace chebqr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Antiderivative from 0 of sum_j c_j T_j(2t - 1), term by term through the
// classical identities for the integral of T_j, evaluated with the trig-form T_j.
double oracle_antiderivative(const std::vector<double>& c, double tau) {
  auto G = [&](double s) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) {
      const double jj = static_cast<double>(j);
      double term;
      if (j == 0) {
        term = 0.5 * s;  // the leading coefficient enters halved
      } else if (j == 1) {
        term = 0.5 * s * s;
      } else {
        term = 0.5 * (oracle::chebyshev_t(j + 1, s) / (jj + 1.0) - oracle::chebyshev_t(j - 1, s) / (jj - 1.0));
      }
      sum += c[j] * term;
    }
    return sum;
  };
  return 0.5 * (G(2.0 * tau - 1.0) - G(-1.0));
}

// ---------------------------------------------------------------------------
// Budgets. Every trained model in the suite uses these, pinned here.

json budget_overrides(const std::string& dataset, const fs::path& data_dir) {
  json o;
  o["seed"] = 20240;
  o["model"]["degree"] = 64;
  if (dataset == "glasses") {
    o["data"]["source"] = "glasses";
    o["train"] = {{"max_epochs", 150}, {"patience", 50}, {"batch_size", 128}, {"n_tau", 8}};
  } else {
    o["data"]["source"] = (data_dir / (dataset + ".csv")).string();
    o["data"]["target"] = dataset == "engel" ? "foodexp" : "target";
    o["data"]["folds"] = 3;
    o["train"] = {{"max_epochs", 500}, {"patience", 100}, {"batch_size", 128}, {"n_tau", 8}};
  }
  return o;
}

struct TrainedRun {
  std::string dataset;
  std::string model;
  std::size_t fold = 0;
  RunConfig config;
  QuantileModel model_state;
  PreparedData data;
  EvalReport report;
  std::size_t epochs = 0;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion_exactness() {
  Rng rng(101);
  std::size_t checks = 0, bad = 0;
  double worst = 0.0;
  auto record = [&](double err, double tol) {
    ++checks;
    worst = std::max(worst, err / tol);
    if (!(err <= tol)) ++bad;
  };
  for (int draw = 0; draw < 200; ++draw) {
    const std::size_t d = 1 + rng.below(64);
    const auto g = make_grid(d);
    // Interpolation at the roots.
    const auto v = random_vector(rng, d, -10.0, 10.0);
    const auto c = values_to_coeffs(g, v).coeffs;
    for (std::size_t k = 0; k < d; ++k) {
      record(std::abs(eval_cheb(c, g.roots[k]) - v[k]), 1e-12 * std::max(1.0, max_abs(v)));
    }
    // Exact antiderivative of a basis-expressed derivative at 1000 grid points.
    const auto basis = random_vector(rng, d, -1.0, 1.0);
    const double K = rng.uniform(-3.0, 3.0);
    const auto P = integrate_series(ChebSeries{basis}, K, ConstantMode::Q0);
    for (int i = 0; i < 1000; ++i) {
      const double tau = i / 999.0;
      record(std::abs(eval_cheb(P.coeffs, tau) - (K + oracle_antiderivative(basis, tau))), 1e-12);
    }
    // Q0 anchoring under both integration lengths.
    const double K2 = rng.uniform(-100.0, 100.0);
    const auto coeffs = random_vector(rng, d, -5.0, 5.0);
    for (auto len : {IntegrationLength::Extended, IntegrationLength::TruncateToD}) {
      const auto Q = integrate_series(ChebSeries{coeffs}, K2, ConstantMode::Q0, len);
      record(std::abs(eval_cheb(Q.coeffs, 0.0) - K2), 1e-12 * std::max(1.0, std::abs(K2)));
    }
    // Clenshaw against the naive recurrence.
    const auto series = random_vector(rng, 1 + rng.below(65), -2.0, 2.0);
    for (int i = 0; i < 20; ++i) {
      const double tau = rng.uniform();
      const double want = oracle::naive_series(series, tau);
      record(std::abs(eval_cheb(series, tau) - want), 1e-12 * std::max(1.0, oracle::abs_sum(series)));
    }
  }
  return {bad == 0, std::to_string(checks) + " checks, " + std::to_string(bad) + " outside tolerance, worst " +
                        fmt(worst) + " of tolerance"};
}

Outcome criterion_gradients() {
  Rng rng(505);
  double worst = 0.0;
  std::size_t params = 0;
  for (int cfg = 0; cfg < 20; ++cfg) {
    ModelSpec spec;
    apply_model_name(spec, rng.below(2) == 0 ? "ours-q0" : "ours-mean");
    spec.input_dim = 1 + rng.below(3);
    spec.degree = 4 + rng.below(61);
    spec.integration = rng.below(2) == 0 ? IntegrationLength::Extended : IntegrationLength::TruncateToD;
    spec.hidden = {3 + rng.below(6)};
    if (rng.below(2) == 0) spec.hidden.push_back(2 + rng.below(5));
    spec.hidden_activation = Activation::Softplus;
    auto model = QuantileModel::create(spec, 900 + static_cast<std::uint64_t>(cfg));
    const std::size_t n = 2 + rng.below(5);
    Matrix x(n, spec.input_dim);
    for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
    std::vector<double> y(n);
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);
    Matrix taus(n, 1 + rng.below(5));
    for (auto& t : taus.data()) t = rng.uniform(0.01, 0.99);

    std::vector<NetworkGradients> grads;
    (void)model.loss_and_gradients(x, y, taus, grads);
    auto loss = [&] {
      std::vector<NetworkGradients> scratch;
      return model.loss_and_gradients(x, y, taus, scratch);
    };
    auto nets = model.networks();
    for (std::size_t k = 0; k < nets.size(); ++k) {
      auto blocks = nets[k]->parameter_blocks();
      auto g = grads[k].blocks();
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < blocks[b].size(); ++i) {
          const double fd = oracle::central_difference(loss, blocks[b][i], 1e-6);
          const double an = g[b][i];
          worst = std::max(worst, std::abs(fd - an) / std::max(1e-4, std::max(std::abs(fd), std::abs(an))));
          ++params;
        }
      }
    }
  }
  return {worst < 1e-4, "20 configurations, " + std::to_string(params) + " parameters, max relative error " + fmt(worst)};
}

Outcome criterion_nam_quadrature() {
  Rng rng(707);
  double const_err = 0.0, lin_err = 0.0, bias_err = 0.0;
  for (std::size_t d = 2; d <= 64; d += 2) {
    const double dd = static_cast<double>(d);
    for (int draw = 0; draw < 10; ++draw) {
      const double tau = draw == 0 ? 1.0 : rng.uniform();
      const auto nodes = make_cc_nodes(d, tau);
      const std::vector<double> ones(d + 1, 1.0);
      const_err = std::max(const_err, std::abs(clenshaw_curtis_integral(ones, tau, 0.0) - tau));
      const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0), K0 = rng.uniform(-1.0, 1.0);
      std::vector<double> lin(d + 1);
      for (std::size_t k = 0; k <= d; ++k) lin[k] = a + b * nodes.nodes[k];
      lin_err = std::max(lin_err, std::abs(clenshaw_curtis_integral(lin, tau, K0) - (K0 + a * tau + 0.5 * b * tau * tau)));
      if (tau > 0.0) {
        const double bias = clenshaw_curtis_integral(ones, tau, 0.0, EndpointRule::AsPrinted) / tau - 1.0;
        bias_err = std::max(bias_err, std::abs(bias - 1.0 / (dd * (dd + 1.0))));
      }
    }
  }
  return {const_err <= 1e-14 && lin_err <= 1e-12 && bias_err <= 1e-12,
          "constant error " + fmt(const_err) + ", linear error " + fmt(lin_err) + ", as-printed bias error " +
              fmt(bias_err) + " (d = 2..64 even)"};
}

Outcome criterion_mean_diagnostic(const fs::path& out) {
  Rng rng(909);
  std::ostringstream csv;
  csv << "draw,degree,K,tau_weighted_integral,mean_integral,tau_weighted_residual,mean_residual\n";
  double formula_err = 0.0, max_tau_res = 0.0, max_mean_res = 0.0;
  bool finite = true;
  for (int draw = 0; draw < 200; ++draw) {
    const std::size_t d = 2 + rng.below(63);
    const auto g = make_grid(d);
    const auto series = values_to_coeffs(g, random_vector(rng, d, 1e-3, 5.0));
    const double K = rng.uniform(-3.0, 3.0);
    const auto P = integrate_series(series, K, ConstantMode::Mean);
    // The constant as written: C_0 = 2K - 2 sum over odd k of C_k / (k^2 - 4).
    double shift = 0.0;
    for (std::size_t k = 1; k < P.coeffs.size(); k += 2) {
      shift += P.coeffs[k] / (static_cast<double>(k * k) - 4.0);
    }
    formula_err = std::max(formula_err, std::abs(P.coeffs[0] - (2.0 * K - 2.0 * shift)));
    const auto diag = mean_condition_diagnostic(P, K);
    finite = finite && std::isfinite(diag.tau_weighted_residual) && std::isfinite(diag.mean_residual);
    max_tau_res = std::max(max_tau_res, std::abs(diag.tau_weighted_residual));
    max_mean_res = std::max(max_mean_res, std::abs(diag.mean_residual));
    csv << draw << ',' << d << ',' << format_double(K) << ',' << format_double(diag.tau_weighted_integral) << ','
        << format_double(diag.mean_integral) << ',' << format_double(diag.tau_weighted_residual) << ','
        << format_double(diag.mean_residual) << '\n';
  }
  write_file_atomic(out / "mean_diagnostic.csv", csv.str());
  return {finite && formula_err <= 1e-12,
          "200 instances recorded; constant formula error " + fmt(formula_err) + "; max |int tau P - K| " +
              fmt(max_tau_res) + ", max |int P - K| " + fmt(max_mean_res)};
}

// Criterion 2, random part: counts (weights, x) pairs whose predictions at the
// ascending roots are not strictly increasing, and the worst Q0 anchoring error.
struct RandomRootsResult {
  std::size_t instances = 0;
  std::size_t violating = 0;
  double worst_anchor = 0.0;
  std::vector<std::size_t> violating_by_band = std::vector<std::size_t>(4, 0);
};

RandomRootsResult random_root_instances(std::size_t count) {
  Rng rng(202);
  RandomRootsResult res;
  const Activation acts[] = {Activation::ReLU, Activation::Softplus};
  for (std::size_t i = 0; i < count; ++i) {
    ModelSpec spec;
    apply_model_name(spec, "ours-q0");
    spec.input_dim = 1 + rng.below(3);
    spec.degree = 4 + rng.below(61);
    spec.hidden = {4 + rng.below(13)};
    spec.hidden_activation = acts[rng.below(2)];
    auto model = QuantileModel::create(spec, 5000 + i);
    if (i % 2 == 1) {
      // Half the instances use unit-scale Gaussian weights instead of the default init.
      for (Network* net : model.networks()) {
        for (auto block : net->parameter_blocks()) {
          for (double& w : block) w = rng.normal();
        }
      }
    }
    Matrix x(1, spec.input_dim);
    for (auto& v : x.data()) v = rng.uniform(-2.0, 2.0);
    const auto roots = model.chebqr().grid.ascending_roots();
    const Matrix q = model.predict(x, roots);
    bool strictly = true;
    for (std::size_t k = 1; k < roots.size(); ++k) strictly = strictly && q(0, k) > q(0, k - 1);
    ++res.instances;
    if (!strictly) {
      ++res.violating;
      ++res.violating_by_band[std::min<std::size_t>(3, (spec.degree - 4) / 16)];
    }
    const double K = forward(model.chebqr().constant, x)(0, 0);
    const double p0 = model.predict(x, std::vector<double>{0.0})(0, 0);
    res.worst_anchor = std::max(res.worst_anchor, std::abs(p0 - K) / std::max(1.0, std::abs(K)));
  }
  return res;
}

Outcome criterion_roots(const RandomRootsResult& random, const std::vector<TrainedRun>& runs) {
  std::size_t trained = 0, trained_bad = 0;
  double worst_anchor = random.worst_anchor;
  std::ostringstream per_run;
  for (const auto& r : runs) {
    if (r.model != "ours-q0") continue;
    ++trained;
    const std::size_t c = r.report.crossing_count_roots.value_or(0);
    if (c != 0) ++trained_bad;
    per_run << ' ' << r.dataset << '/' << r.fold << '=' << c;
    const Matrix& x = r.data.fold.x_test;
    const Matrix K = forward(r.model_state.chebqr().constant, x);
    const Matrix p0 = r.model_state.predict(x, std::vector<double>{0.0});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      worst_anchor = std::max(worst_anchor, std::abs(p0(i, 0) - K(i, 0)) / std::max(1.0, std::abs(K(i, 0))));
    }
  }
  const bool pass = random.violating == 0 && trained_bad == 0 && worst_anchor <= 1e-10;
  return {pass, std::to_string(random.violating) + " of " + std::to_string(random.instances) +
                    " random instances not strictly increasing at the roots (d 4-19: " +
                    std::to_string(random.violating_by_band[0]) + ", 20-35: " +
                    std::to_string(random.violating_by_band[1]) + ", 36-51: " +
                    std::to_string(random.violating_by_band[2]) + ", 52-64: " +
                    std::to_string(random.violating_by_band[3]) + "); trained root crossings:" + per_run.str() +
                    "; worst Q0 anchoring " + fmt(worst_anchor)};
}

Outcome criterion_structural(const std::vector<TrainedRun>& runs) {
  std::size_t instances = 0, total = 0;
  for (const auto& r : runs) {
    if (r.model != "normal" && r.model != "pcdn") continue;
    ++instances;
    total += r.report.crossing_count_grid;
  }
  return {instances > 0 && total == 0,
          std::to_string(instances) + " trained NormalHet/PCDN instances, " + std::to_string(total) +
              " crossings on the 980 grid"};
}

Outcome criterion_iqn(const std::vector<TrainedRun>& runs, const fs::path& out) {
  const TrainedRun* iqn = nullptr;
  for (const auto& r : runs) {
    if (r.model == "iqn" && r.dataset == "glasses") iqn = &r;
  }
  if (!iqn) return {false, "no IQN glasses run"};
  const json record{{"model", "iqn"},
                    {"dataset", "glasses"},
                    {"crossing_count_grid", iqn->report.crossing_count_grid},
                    {"n_test", iqn->report.n_test},
                    {"grid_size", grid_980().size()},
                    {"unit", "adjacent decreasing pairs summed over test rows"}};
  write_file_atomic(out / "iqn_glasses_crossings.json", record.dump(2) + "\n");
  const auto back = read_json_file((out / "iqn_glasses_crossings.json").string());
  const bool persisted = back.at("crossing_count_grid") == iqn->report.crossing_count_grid;

  // Penalty term of IQN-P: objective with the penalty minus the plain objective.
  ModelSpec spec;
  apply_model_name(spec, "iqn-p");
  spec.input_dim = 1;
  spec.hidden = {1};
  spec.hidden_activation = Activation::Identity;
  auto penalized = QuantileModel::create(spec, 1);
  auto& psi = std::get<ImplicitModel>(penalized.impl()).psi;
  auto set_slope = [&](double slope) {
    for (auto& l : psi.layers) {
      l.weights.fill(0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
      l.activation = Activation::Identity;
    }
    // psi([x, tau]) = slope * tau through the identity hidden unit.
    psi.layers[0].weights(0, psi.layers[0].weights.cols() - 1) = 1.0;
    psi.layers.back().weights(0, 0) = slope;
  };
  auto penalty_term = [&] {
    ModelSpec plain_spec = spec;
    plain_spec.penalty = PenaltyKind::None;
    QuantileModel plain(plain_spec, penalized.impl());
    const Matrix x(2, 1, std::vector<double>{0.3, -0.4});
    const std::vector<double> y{0.1, 0.2};
    const Matrix taus(2, 3, std::vector<double>{0.9, 0.1, 0.5, 0.2, 0.6, 0.4});
    std::vector<NetworkGradients> g;
    return penalized.loss_and_gradients(x, y, taus, g) - plain.loss_and_gradients(x, y, taus, g);
  };
  set_slope(1.0);
  const double monotone = penalty_term();
  set_slope(-1.0);
  const double inverted = penalty_term();
  return {persisted && monotone == 0.0 && inverted > 0.0,
          "IQN glasses crossings on the 980 grid: " + std::to_string(iqn->report.crossing_count_grid) +
              " (persisted " + std::string(persisted ? "yes" : "no") + "); IQN-P penalty monotone " + fmt(monotone) +
              ", inverted " + fmt(inverted)};
}

Outcome criterion_loglik(const std::vector<TrainedRun>& runs, double seconds) {
  std::ostringstream detail;
  bool pass = true;
  for (const std::string ds : {"engel", "diabetes"}) {
    double ours = 0.0, iqn = 0.0;
    std::size_t n_ours = 0, n_iqn = 0;
    for (const auto& r : runs) {
      if (r.dataset != ds) continue;
      if (r.model == "ours-q0") ours += r.report.loglik_sum, ++n_ours;
      if (r.model == "iqn") iqn += r.report.loglik_sum, ++n_iqn;
    }
    if (n_ours != 3 || n_iqn != 3) return {false, ds + ": missing folds"};
    ours /= 3.0;
    iqn /= 3.0;
    pass = pass && ours >= iqn;
    detail << ds << " ours-q0 " << fmt(ours) << " vs iqn " << fmt(iqn) << "; ";
  }
  detail << "training " << fmt(seconds) << " s";
  return {pass && seconds < 1800.0, detail.str()};
}

Outcome criterion_inversion(const std::vector<TrainedRun>& runs) {
  std::vector<const TrainedRun*> pool;
  for (const auto& r : runs) {
    if (r.model == "ours-q0") pool.push_back(&r);
  }
  Rng rng(808);
  std::size_t done = 0, skipped = 0, failures = 0, max_iter = 0;
  double worst = 0.0;
  while (done < 100 && skipped < 10000) {
    const TrainedRun& r = *pool[done % pool.size()];
    const Matrix& xt = r.data.fold.x_test;
    const auto row = xt.row(rng.below(xt.rows()));
    const Matrix x(1, row.size(), std::vector<double>(row.begin(), row.end()));
    const Matrix ends = r.model_state.predict(x, std::vector<double>{0.0, 1.0});
    if (!(ends(0, 0) < ends(0, 1))) {
      ++skipped;
      continue;
    }
    const double y = ends(0, 0) + rng.uniform() * (ends(0, 1) - ends(0, 0));
    try {
      const auto res = invert(r.model_state, row, y);
      const double back = r.model_state.predict(x, std::vector<double>{res.tau})(0, 0);
      worst = std::max(worst, std::abs(back - y));
      max_iter = std::max(max_iter, res.iterations);
      if (!(std::abs(back - y) <= 1e-8) || res.iterations > 50) ++failures;
    } catch (const Error&) {
      ++failures;
    }
    ++done;
  }
  return {done == 100 && failures == 0,
          std::to_string(done) + " draws, " + std::to_string(failures) + " failures, max residual " + fmt(worst) +
              ", max iterations " + std::to_string(max_iter)};
}

Outcome criterion_determinism(const std::string& cli, const fs::path& data_dir, const fs::path& out) {
  const fs::path a = out / "determinism" / "a";
  const fs::path b = out / "determinism" / "b";
  fs::remove_all(out / "determinism");
  auto run = [](const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); };
  const std::string q = "'";
  const std::string base = q + cli + q + " -q ";
  int rc = run(base + "--seed 7 --out " + q + a.string() + q + " train -m ours-q0 --data " + q +
               (data_dir / "engel.csv").string() + q + " --target foodexp --folds 3 --fold 1 --epochs 25 --degree 32");
  rc |= run(base + "evaluate --run " + q + a.string() + q);
  rc |= run(base + "--config " + q + (a / "config.json").string() + q + " --out " + q + b.string() + q + " train");
  rc |= run(base + "evaluate --run " + q + b.string() + q);
  if (rc != 0) return {false, "CLI invocation failed"};
  bool same = true;
  std::string differing;
  for (const char* f : {"config.json", "checkpoint.json", "history.csv", "report.json", "fan.csv"}) {
    if (read_file(a / f) != read_file(b / f)) {
      same = false;
      differing += std::string(" ") + f;
    }
  }
  // In-process: every family twice from the same resolved config.
  std::size_t families = 0;
  for (const std::string name : {"ours-q0", "ours-mean", "nam", "iqn", "iqn-p", "iqn-d", "pcdn", "normal"}) {
    json o = budget_overrides("engel", data_dir);
    o["model"]["model"] = name;
    o["model"]["degree"] = 16;
    o["train"]["max_epochs"] = 3;
    const RunConfig cfg = resolve_config(nullptr, o);
    const auto first = run_training(cfg);
    const auto second = run_training(resolve_config(config_to_json(cfg), nullptr));
    if (checkpoint_json(first, cfg).dump() != checkpoint_json(second, cfg).dump()) {
      same = false;
      differing += " in-process:" + name;
    }
    ++families;
  }
  return {same, same ? "CLI rerun from echoed config bitwise identical (checkpoint, history, report, fan); " +
                           std::to_string(families) + " families identical in-process"
                     : "differences:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: acceptance <chebqr-cli> <data-dir> <out-dir>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path data_dir = argv[2];
  const fs::path out = argv[3];
  fs::create_directories(out);

  std::vector<std::pair<int, Outcome>> results;
  json summary;
  auto report = [&](int id, const std::string& title, Outcome o, double secs) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": " << o.detail << " ["
              << fmt(secs) << " s]" << std::endl;
    summary["criteria"].push_back({{"id", id}, {"title", title}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}});
    results.emplace_back(id, std::move(o));
  };
  auto timed = [](const std::function<Outcome()>& f, double& secs) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    secs = seconds_since(t0);
    return o;
  };

  double s1 = 0, s5 = 0, s7 = 0, s9 = 0, s2r = 0, s8 = 0, s10 = 0;
  Outcome c1 = timed(criterion_exactness, s1);
  Outcome c5 = timed(criterion_gradients, s5);
  Outcome c7 = timed(criterion_nam_quadrature, s7);
  Outcome c9 = timed([&] { return criterion_mean_diagnostic(out); }, s9);

  RandomRootsResult random_roots;
  {
    const auto t0 = Clock::now();
    random_roots = random_root_instances(10000);
    s2r = seconds_since(t0);
  }

  // Shared training runs for criteria 2, 3, 4, 6 and 8.
  std::vector<TrainedRun> runs;
  double tabular_seconds = 0.0;
  bool training_ok = true;
  std::string training_error;
  const auto t_train = Clock::now();
  try {
    for (const std::string ds : {"glasses", "engel", "diabetes"}) {
      const std::size_t folds = ds == "glasses" ? 1 : 3;
      for (std::size_t k = 0; k < folds; ++k) {
        for (const std::string name : {"ours-q0", "iqn", "normal", "pcdn"}) {
          json o = budget_overrides(ds, data_dir);
          o["model"]["model"] = name;
          o["fold"] = k;
          const RunConfig cfg = resolve_config(nullptr, o);
          const auto t0 = Clock::now();
          auto trained = run_training(cfg);
          auto rep = evaluate_model(trained.model, trained.data.fold, k, cfg.eval, config_to_json(cfg));
          TrainedRun r{ds, name, k, cfg, std::move(trained.model), std::move(trained.data), std::move(rep),
                       trained.history.records.size() - 1, seconds_since(t0)};
          if (ds != "glasses") tabular_seconds += r.seconds;
          write_file_atomic(out / "runs" / (ds + "-" + name + "-fold-" + std::to_string(k) + ".json"),
                            report_to_json(r.report).dump(2) + "\n");
          std::cerr << "trained " << ds << " fold " << k << " " << name << " (" << r.epochs << " epochs, "
                    << fmt(r.seconds) << " s)\n";
          runs.push_back(std::move(r));
        }
      }
    }
  } catch (const std::exception& e) {
    training_ok = false;
    training_error = e.what();
  }
  const double train_seconds = seconds_since(t_train);
  summary["budgets"] = {{"glasses", budget_overrides("glasses", data_dir)},
                        {"tabular", budget_overrides("engel", data_dir)},
                        {"training_seconds", train_seconds}};
  auto needs_training = [&](const std::function<Outcome()>& f) {
    return [&, f] { return training_ok ? f() : Outcome{false, "training failed: " + training_error}; };
  };

  double s2 = 0, s3 = 0, s4 = 0, s6 = 0;
  Outcome c2 = timed(needs_training([&] { return criterion_roots(random_roots, runs); }), s2);
  Outcome c3 = timed(needs_training([&] { return criterion_structural(runs); }), s3);
  Outcome c4 = timed(needs_training([&] { return criterion_iqn(runs, out); }), s4);
  Outcome c6 = timed(needs_training([&] { return criterion_loglik(runs, tabular_seconds); }), s6);
  Outcome c8 = timed(needs_training([&] { return criterion_inversion(runs); }), s8);
  Outcome c10 = timed([&] { return criterion_determinism(cli, data_dir, out); }, s10);

  if (s1 >= 10.0) c1 = {false, c1.detail + "; over the 10 s budget"};
  if (s5 >= 60.0) c5 = {false, c5.detail + "; over the 60 s budget"};
  if (s7 >= 5.0) c7 = {false, c7.detail + "; over the 5 s budget"};
  if (s8 >= 30.0) c8 = {false, c8.detail + "; over the 30 s budget"};

  report(1, "Chebyshev exactness", c1, s1);
  report(2, "non-crossing at the roots", c2, s2 + s2r);
  report(3, "structural zero-crossing baselines", c3, s3);
  report(4, "crossing-prone baselines measured", c4, s4);
  report(5, "gradient integrity", c5, s5);
  report(6, "log-likelihood direction", c6, s6);
  report(7, "NAM quadrature", c7, s7);
  report(8, "inversion round trip", c8, s8);
  report(9, "Mean-mode diagnostic", c9, s9);
  report(10, "determinism", c10, s10);

  std::size_t failed = 0;
  for (const auto& [id, o] : results) failed += o.pass ? 0 : 1;
  summary["failed"] = failed;
  write_file_atomic(out / "acceptance.json", summary.dump(2) + "\n");
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
