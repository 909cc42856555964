#include "chmm/simulate.hpp"

#include <string>

#include "chmm/errors.hpp"
#include "chmm/model.hpp"
#include "chmm/rng.hpp"

namespace chmm {

void SimulationConfig::validate() const {
  if (n_patients < 1) throw ValidationError("n_patients must be >= 1");
  if (t_min < 2) throw ValidationError("t_min must be >= 2");
  if (t_max < t_min) throw ValidationError("t_max must be >= t_min");
  true_params.validate();
  for (const auto& g : generators)
    if (g.name.empty())
      throw ValidationError("covariate generator missing a name");
}

namespace {

struct Derivation {
  enum class Kind { plain, center, lag } kind;
  std::string source;
  std::string result;
};

Derivation parse_derivation(const std::string& spec) {
  Derivation d;
  if (spec.rfind("center:", 0) == 0) {
    d.kind = Derivation::Kind::center;
    d.source = spec.substr(7);
    d.result = d.source + "_centered";
  } else if (spec.rfind("lag:", 0) == 0) {
    d.kind = Derivation::Kind::lag;
    d.source = spec.substr(4);
    d.result = d.source + "_lag1";
  } else {
    d.kind = Derivation::Kind::plain;
    d.source = spec;
    d.result = spec;
  }
  if (d.source.empty())
    throw ValidationError("empty covariate name in derivation '" + spec + "'");
  return d;
}

}  // namespace

PanelDataset apply_derivations(const PanelDataset& data,
                               const std::vector<std::string>& derive) {
  if (derive.empty()) return data;
  PanelDataset work = data;
  std::vector<std::string> model_columns;
  for (const auto& spec : derive) {
    Derivation d = parse_derivation(spec);
    switch (d.kind) {
      case Derivation::Kind::plain:
        work.covariate_index(d.source);  // existence check
        break;
      case Derivation::Kind::center:
        work = center_within(work, d.source);
        break;
      case Derivation::Kind::lag:
        work = lag_covariate(work, d.source, 1);
        break;
    }
    model_columns.push_back(d.result);
  }
  return select_covariates(work, model_columns);
}

SimulatedPanel simulate_dataset(const SimulationConfig& config) {
  config.validate();
  const Parameters& par = config.true_params;
  const StateSpace& sp = par.space;
  const int G = sp.n_global();

  SimulatedPanel out;
  out.raw.meta = "simulated seed=" + std::to_string(config.seed);
  for (const auto& g : config.generators)
    out.raw.covariate_names.push_back(g.name);

  Rng rng(config.seed);
  for (int i = 0; i < config.n_patients; ++i) {
    const int T = rng.uniform_int(config.t_min, config.t_max);
    PatientSeries pat;
    pat.id = "p" + std::to_string(i + 1);
    pat.y_a.resize(T);
    pat.y_b.resize(T);
    pat.x.resize(T, static_cast<int>(config.generators.size()));
    for (std::size_t c = 0; c < config.generators.size(); ++c) {
      const auto& gen = config.generators[c];
      switch (gen.kind) {
        case CovariateGenerator::Kind::normal:
          for (int t = 0; t < T; ++t)
            pat.x(t, static_cast<int>(c)) = rng.normal(gen.mean, gen.sd);
          break;
        case CovariateGenerator::Kind::bernoulli:
          for (int t = 0; t < T; ++t)
            pat.x(t, static_cast<int>(c)) = rng.bernoulli(gen.rate) ? 1.0 : 0.0;
          break;
        case CovariateGenerator::Kind::constant_normal: {
          const double v = rng.normal(gen.mean, gen.sd);
          pat.x.col(static_cast<int>(c)).setConstant(v);
          break;
        }
        case CovariateGenerator::Kind::linear_t:
          for (int t = 0; t < T; ++t)
            pat.x(t, static_cast<int>(c)) = gen.mean + gen.slope * t;
          break;
      }
    }
    out.raw.patients.push_back(std::move(pat));
  }

  // Chain and emissions run on the post-derivation design columns, the same
  // columns a fit of this dataset would use.
  out.data = apply_derivations(out.raw, config.derive);
  out.data.meta = out.raw.meta;
  if (out.data.n_covariates() != par.n_covariates())
    throw ValidationError(
        "true parameters expect " + std::to_string(par.n_covariates()) +
        " covariates but the generator set yields " +
        std::to_string(out.data.n_covariates()));

  out.states.resize(config.n_patients);
  for (int i = 0; i < config.n_patients; ++i) {
    PatientSeries& pat = out.data.patients[i];
    const int T = pat.T();
    auto& path = out.states[i];
    path.resize(T);
    path[0] = rng.categorical(par.pi);
    for (int t = 1; t < T; ++t) {
      // Transition into t is driven by the covariates observed at t-1.
      Eigen::MatrixXd gamma = transition_matrix(par, pat.x.row(t - 1));
      Eigen::VectorXd row = gamma.row(path[t - 1]);
      path[t] = rng.categorical(row);
    }
    for (int t = 0; t < T; ++t) {
      const int g = path[t];
      pat.y_a[t] = rng.normal(par.mu_a[g / sp.n_b], par.sigma_a);
      pat.y_b[t] = rng.normal(par.mu_b[g % sp.n_b], par.sigma_b);
    }
    (void)G;
    out.raw.patients[i].y_a = pat.y_a;
    out.raw.patients[i].y_b = pat.y_b;
  }

  out.data.validate();
  out.raw.validate();
  return out;
}

}  // namespace chmm
