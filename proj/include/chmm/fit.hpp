#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "chmm/diagnostics.hpp"
#include "chmm/likelihood.hpp"
#include "chmm/nuts.hpp"
#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"
#include "chmm/simulate.hpp"
#include "chmm/transforms.hpp"

namespace chmm {

struct ModelSpec {
  int n_a = 2;
  int n_b = 2;
  // Derivation directives evaluated in order against the loaded panel:
  // "name", "center:name", "lag:name". The results are the model columns.
  std::vector<std::string> covariates;
};

// A completed fit: unconstrained draws plus the constrained named view with
// the coefficient block mapped back to the raw covariate scale.
struct FitResult {
  StateSpace space;
  UnconstrainedLayout layout;
  QRBasis qr;
  PanelDataset model_data;  // derived covariates on the raw (reported) scale
  Draws draws;              // unconstrained sampler output

  std::vector<std::string> constrained_names;
  std::vector<Eigen::MatrixXd> constrained_chains;  // n_iter x n_params each
  std::vector<Parameters> draw_params;              // chain-major, raw scale
  DiagnosticsReport diagnostics;

  Eigen::MatrixXd constrained_stacked() const;
  // Posterior-mean parameters (pi renormalized); the plug-in point estimate
  // used for decoding.
  Parameters posterior_mean_params() const;
};

// Names of the constrained parameter columns for a given shape, in the
// order the draws CSV uses.
std::vector<std::string> constrained_parameter_names(
    const StateSpace& space, const std::vector<std::string>& covariate_names);

// Emission-split initial points: means from pooled quantile bins, SDs from
// within-bin spread, uniform pi, Uniform(-2,2) jitter on alpha and the
// coefficient block; retried until the target is finite.
std::vector<Eigen::VectorXd> initialize_chains(const PanelDataset& data,
                                               const UnconstrainedLayout& layout,
                                               const LogPosterior& target,
                                               const ChainConfig& config);

// Full pipeline: derivations -> QR -> init -> sampling -> constrained view
// and diagnostics. The input panel carries raw covariates.
FitResult run_fit(const PanelDataset& raw_panel, const ModelSpec& model,
                  const ChainConfig& chains,
                  const ProgressFn& progress = nullptr);

void write_draws_csv(const FitResult& fit, const std::string& path);
void write_traceplot_csvs(const FitResult& fit, const std::string& dir);
void write_manifest_json(const FitResult& fit, const ChainConfig& config,
                         const std::string& config_hash,
                         const std::string& command_line,
                         const std::string& path);

// Reload of the draws CSV plus manifest for post-fit commands.
struct LoadedFit {
  int n_a = 2, n_b = 2;
  std::vector<std::string> covariate_names;  // model columns
  std::vector<std::string> constrained_names;
  std::vector<Eigen::MatrixXd> constrained_chains;
  std::vector<Parameters> draw_params;
  std::uint64_t seed = 0;
  std::string config_hash;
  bool converged = false;
  int divergences = 0;

  Parameters posterior_mean_params() const;
};

LoadedFit load_fit_artifacts(const std::string& draws_path,
                             const std::string& manifest_path);

}  // namespace chmm
