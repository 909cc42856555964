#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"

namespace chmm {

// Covariate path generator for one raw column.
//   normal:          iid standard normal draws scaled to (mean, sd)
//   bernoulli:       iid 0/1 draws with P(1) = rate
//   constant_normal: one N(mean, sd) draw per patient, repeated over t
//   linear_t:        mean + slope * (t - 1), deterministic in time
struct CovariateGenerator {
  enum class Kind { normal, bernoulli, constant_normal, linear_t };
  Kind kind = Kind::normal;
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
  double rate = 0.5;   // bernoulli only
  double slope = 1.0;  // linear_t only
};

struct SimulationConfig {
  int n_patients = 100;
  int t_min = 4;
  int t_max = 10;
  Parameters true_params;
  std::vector<CovariateGenerator> generators;
  // Model covariates may be derived from generated ones before the chain
  // sees them: each entry is "name", "center:<name>", or "lag:<name>".
  // Empty means the generated columns feed the chain as-is.
  std::vector<std::string> derive;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimulatedPanel {
  PanelDataset data;        // covariates after derivation steps
  PanelDataset raw;         // generated columns only, as written to disk
  std::vector<std::vector<int>> states;  // global state path per patient
};

// Generates a cohort from the true model: per patient, T ~ uniform
// {t_min..t_max}, covariate paths from the generators, derivation steps
// applied, then the global chain and emissions. Deterministic given seed.
SimulatedPanel simulate_dataset(const SimulationConfig& config);

// Applies a derivation list ("center:<name>" / "lag:<name>" / plain names)
// and returns the dataset restricted to the resulting model columns, in the
// listed order. Shared by the simulator and the fit pipeline so both sides
// construct identical design columns.
PanelDataset apply_derivations(const PanelDataset& data,
                               const std::vector<std::string>& derive);

}  // namespace chmm
