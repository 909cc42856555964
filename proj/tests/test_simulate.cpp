#include <cmath>
#include <map>

#include "chmm/errors.hpp"
#include "chmm/model.hpp"
#include "chmm/simulate.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace chmm;

namespace {

Parameters recovery_truth() {
  StateSpace s(2, 2);
  Parameters par = make_empty_parameters(s, 0);
  par.mu_a << 4.55, 4.70;
  par.mu_b << 2.86, 3.43;
  par.sigma_a = 0.09;
  par.sigma_b = 0.30;
  par.pi << 0.4, 0.2, 0.2, 0.2;
  par.alpha << 0.0, -2.0, -2.0, -2.0,
               -1.5, 0.0, -2.0, -2.0,
               -2.0, -2.0, 0.0, -1.0,
               -2.0, -1.5, -2.0, 0.0;
  return par;
}

SimulationConfig base_config() {
  SimulationConfig cfg;
  cfg.n_patients = 30;
  cfg.t_min = 4;
  cfg.t_max = 8;
  cfg.true_params = recovery_truth();
  cfg.seed = 20260815;
  return cfg;
}

}  // namespace

TEST_CASE("simulation is deterministic given the seed") {
  SimulationConfig cfg = base_config();
  SimulatedPanel a = simulate_dataset(cfg);
  SimulatedPanel b = simulate_dataset(cfg);
  REQUIRE(a.data.n_patients() == b.data.n_patients());
  for (int i = 0; i < a.data.n_patients(); ++i) {
    CHECK(a.data.patients[i].y_a == b.data.patients[i].y_a);
    CHECK(a.data.patients[i].y_b == b.data.patients[i].y_b);
    CHECK(a.data.patients[i].x == b.data.patients[i].x);
    CHECK(a.states[i] == b.states[i]);
  }
  SimulationConfig other = cfg;
  other.seed = cfg.seed + 1;
  SimulatedPanel c = simulate_dataset(other);
  CHECK(a.data.patients[0].y_a != c.data.patients[0].y_a);
}

TEST_CASE("series lengths respect the configured range and sum to N rows") {
  SimulationConfig cfg = base_config();
  cfg.n_patients = 200;
  SimulatedPanel sim = simulate_dataset(cfg);
  CHECK(sim.data.n_patients() == 200);
  int total = 0;
  bool saw_min = false, saw_max = false;
  for (const auto& pat : sim.data.patients) {
    CHECK(pat.T() >= cfg.t_min);
    CHECK(pat.T() <= cfg.t_max);
    saw_min = saw_min || pat.T() == cfg.t_min;
    saw_max = saw_max || pat.T() == cfg.t_max;
    total += pat.T();
  }
  CHECK(sim.data.total_rows() == total);
  CHECK(saw_min);
  CHECK(saw_max);
  CHECK_NOTHROW(sim.data.validate());
}

TEST_CASE("near-zero emission noise exposes the latent path in the data") {
  SimulationConfig cfg = base_config();
  cfg.true_params.sigma_a = 1e-6;
  cfg.true_params.sigma_b = 1e-6;
  SimulatedPanel sim = simulate_dataset(cfg);
  const Parameters& par = cfg.true_params;
  for (int i = 0; i < sim.data.n_patients(); ++i) {
    const auto& pat = sim.data.patients[i];
    for (int t = 0; t < pat.T(); ++t) {
      const int g = sim.states[i][t];
      CHECK(std::abs(pat.y_a[t] - par.mu_a[par.space.state_a_of(g)]) < 1e-4);
      CHECK(std::abs(pat.y_b[t] - par.mu_b[par.space.state_b_of(g)]) < 1e-4);
    }
  }
}

TEST_CASE("diagonal dominance keeps the chain nearly frozen") {
  SimulationConfig cfg = base_config();
  cfg.n_patients = 1;
  cfg.t_min = cfg.t_max = 10001;
  const int G = 4;
  cfg.true_params.alpha = Eigen::MatrixXd::Constant(G, G, -5.0);
  cfg.true_params.alpha.diagonal().setZero();
  SimulatedPanel sim = simulate_dataset(cfg);
  const auto& path = sim.states[0];
  int switches = 0;
  for (std::size_t t = 1; t < path.size(); ++t) {
    if (path[t] != path[t - 1]) ++switches;
  }
  // Per-step switch probability is 3*e^-5/(1+3*e^-5) ~ 2%.
  CHECK(static_cast<double>(switches) / (path.size() - 1) < 0.05);
}

TEST_CASE("empirical transition frequencies match the analytic matrix") {
  SimulationConfig cfg = base_config();
  cfg.n_patients = 1;
  cfg.t_min = cfg.t_max = 100001;
  cfg.seed = 77;
  SimulatedPanel sim = simulate_dataset(cfg);
  const auto& path = sim.states[0];

  Eigen::VectorXd none(0);
  Eigen::MatrixXd gamma = transition_matrix(cfg.true_params, none);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(4, 4);
  for (std::size_t t = 1; t < path.size(); ++t) {
    counts(path[t - 1], path[t]) += 1.0;
  }
  for (int j = 0; j < 4; ++j) {
    const double total = counts.row(j).sum();
    REQUIRE(total > 1000.0);
    for (int k = 0; k < 4; ++k) {
      CHECK(std::abs(counts(j, k) / total - gamma(j, k)) < 0.01);
    }
  }
}

TEST_CASE("emissions within a fixed state match mean and spread") {
  SimulationConfig cfg = base_config();
  cfg.n_patients = 400;
  cfg.seed = 31;
  SimulatedPanel sim = simulate_dataset(cfg);
  const Parameters& par = cfg.true_params;

  // Pool channel-A observations by the A-state of the simulated path.
  for (int target = 0; target < 2; ++target) {
    std::vector<double> ys;
    for (int i = 0; i < sim.data.n_patients(); ++i) {
      for (int t = 0; t < sim.data.patients[i].T(); ++t) {
        if (par.space.state_a_of(sim.states[i][t]) == target) {
          ys.push_back(sim.data.patients[i].y_a[t]);
        }
      }
    }
    const double n = static_cast<double>(ys.size());
    REQUIRE(n > 200.0);
    double mean = 0.0;
    for (double y : ys) mean += y;
    mean /= n;
    double var = 0.0;
    for (double y : ys) var += (y - mean) * (y - mean);
    var /= (n - 1.0);
    // Mean within 3 standard errors; SD within 3 SEs of its sampling noise.
    CHECK(std::abs(mean - par.mu_a[target]) <
          3.0 * par.sigma_a / std::sqrt(n));
    CHECK(std::abs(std::sqrt(var) - par.sigma_a) <
          3.0 * par.sigma_a / std::sqrt(2.0 * (n - 1.0)));
  }
}

TEST_CASE("covariate generators produce the advertised shapes") {
  SimulationConfig cfg = base_config();
  cfg.n_patients = 300;
  CovariateGenerator gn;
  gn.kind = CovariateGenerator::Kind::normal;
  gn.name = "load";
  gn.mean = 2.0;
  gn.sd = 0.5;
  CovariateGenerator gb;
  gb.kind = CovariateGenerator::Kind::bernoulli;
  gb.name = "treat";
  gb.rate = 0.3;
  CovariateGenerator gc;
  gc.kind = CovariateGenerator::Kind::constant_normal;
  gc.name = "age";
  gc.mean = 60.0;
  gc.sd = 8.0;
  CovariateGenerator gl;
  gl.kind = CovariateGenerator::Kind::linear_t;
  gl.name = "years_in";
  gl.mean = 1.0;
  gl.slope = 1.0;
  cfg.generators = {gn, gb, gc, gl};
  cfg.true_params = recovery_truth();
  cfg.true_params.beta = Eigen::MatrixXd::Zero(16, 4);

  SimulatedPanel sim = simulate_dataset(cfg);
  CHECK(sim.raw.covariate_names ==
        std::vector<std::string>{"load", "treat", "age", "years_in"});

  int ones = 0, rows = 0;
  double load_sum = 0.0;
  for (const auto& pat : sim.raw.patients) {
    for (int t = 0; t < pat.T(); ++t) {
      ++rows;
      load_sum += pat.x(t, 0);
      const double tr = pat.x(t, 1);
      CHECK((tr == 0.0 || tr == 1.0));
      if (tr == 1.0) ++ones;
      // Per-patient constant column stays constant.
      CHECK(pat.x(t, 2) == pat.x(0, 2));
      // Linear-in-t column is exactly mean + slope*(t-1).
      CHECK(pat.x(t, 3) == doctest::Approx(1.0 + t).epsilon(1e-14));
    }
  }
  const double rate = static_cast<double>(ones) / rows;
  CHECK(std::abs(rate - 0.3) < 3.0 * std::sqrt(0.3 * 0.7 / rows));
  CHECK(std::abs(load_sum / rows - 2.0) < 3.0 * 0.5 / std::sqrt(rows));
}

TEST_CASE("derivation steps shape the model design columns") {
  SimulationConfig cfg = base_config();
  CovariateGenerator gb;
  gb.kind = CovariateGenerator::Kind::bernoulli;
  gb.name = "treat";
  gb.rate = 0.5;
  cfg.generators = {gb};
  cfg.derive = {"center:treat", "lag:treat_centered"};
  cfg.true_params = recovery_truth();
  cfg.true_params.beta = Eigen::MatrixXd::Zero(16, 2);

  SimulatedPanel sim = simulate_dataset(cfg);
  CHECK(sim.data.covariate_names ==
        std::vector<std::string>{"treat_centered", "treat_centered_lag1"});
  // Raw panel keeps only the generated column.
  CHECK(sim.raw.covariate_names == std::vector<std::string>{"treat"});
  // The derived view reproduces apply_derivations on the raw panel.
  PanelDataset derived = apply_derivations(sim.raw, cfg.derive);
  for (int i = 0; i < sim.data.n_patients(); ++i) {
    CHECK(derived.patients[i].x == sim.data.patients[i].x);
  }
  for (const auto& pat : sim.data.patients) {
    CHECK(std::abs(pat.x.col(0).mean()) < 1e-12);
    CHECK(pat.x(0, 1) == 0.0);
  }
}

TEST_CASE("apply_derivations handles plain names and rejects unknowns") {
  PanelDataset data;
  data.covariate_names = {"a", "b"};
  PatientSeries pat;
  pat.id = "q";
  pat.y_a.setConstant(2, 4.5);
  pat.y_b.setConstant(2, 3.0);
  pat.x.resize(2, 2);
  pat.x << 1.0, 10.0, 2.0, 20.0;
  data.patients.push_back(pat);

  PanelDataset out = apply_derivations(data, {"b", "a"});
  CHECK(out.covariate_names == std::vector<std::string>{"b", "a"});
  CHECK(out.patients[0].x(0, 0) == 10.0);
  CHECK(out.patients[0].x(0, 1) == 1.0);

  CHECK_THROWS_AS(apply_derivations(data, {"center:zzz"}), ValidationError);
  CHECK_THROWS_AS(apply_derivations(data, {"ghost"}), ValidationError);
}

TEST_CASE("simulation config validation rejects bad shapes") {
  SimulationConfig cfg = base_config();
  cfg.t_min = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = base_config();
  cfg.t_max = 3;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = base_config();
  cfg.n_patients = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = base_config();
  cfg.true_params.sigma_a = -1.0;
  CHECK_THROWS_AS(simulate_dataset(cfg), ValidationError);
}
