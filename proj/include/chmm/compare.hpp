#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "chmm/fit.hpp"
#include "chmm/panel.hpp"

namespace chmm {

// Widely-applicable information criterion over a draws x patients matrix of
// patient-level log predictive densities.
struct WaicResult {
  double elpd_waic = 0.0;
  double p_waic = 0.0;
  double waic_deviance = 0.0;  // exactly -2 * elpd_waic
  double se = 0.0;             // sqrt(N * var of per-patient contributions)
  Eigen::VectorXd lpd_i;       // log-mean-exp per patient
  Eigen::VectorXd p_i;         // draw variance per patient
  Eigen::VectorXd elpd_i;      // lpd_i - p_i
};

WaicResult waic(const Eigen::MatrixXd& pointwise);

// Generalized Pareto fit of positive exceedances by the grid
// profile-likelihood method with a weak shape prior; k uses the convention
// where k > 0 means a heavy tail. Exposed for direct testing.
struct GpdFit {
  double k = 0.0;
  double sigma = 0.0;
};

GpdFit gpd_fit(std::vector<double> exceedances);

// Quantile of the generalized Pareto distribution in the same convention.
double gpd_quantile(double p, double k, double sigma);

// Leave-one-out expected log predictive density via Pareto-smoothed
// importance sampling, patient as the pointwise unit.
struct LooResult {
  double elpd_loo = 0.0;
  double se = 0.0;
  double p_loo = 0.0;
  Eigen::VectorXd elpd_i;
  // Tail-shape diagnostic per patient. Sentinels: -inf for a constant
  // pointwise column (no importance variation), +inf when the tail cannot
  // be fit (too few draws or an all-equal tail).
  Eigen::VectorXd pareto_k;
  // Counts over (-inf, 0.5], (0.5, 0.7], (0.7, 1.0], (1.0, inf); sums to N.
  std::array<int, 4> k_counts{{0, 0, 0, 0}};
  bool small_sample = false;  // fewer than 100 draws: estimates are rough
};

LooResult psis_loo(const Eigen::MatrixXd& pointwise);

// One fitted model variant in a comparison run.
struct VariantSpec {
  std::string label;
  int n_a = 2;
  int n_b = 2;
};

struct VariantResult {
  std::string label;
  int n_a = 0, n_b = 0;
  bool interactions = false;  // both chains have dynamics (n_a>1 and n_b>1)
  bool converged = false;
  bool failed = false;  // fit threw; error carries the message
  std::string error;
  int n_patients = 0;
  double elpd_loo = 0.0, se_elpd = 0.0, p_loo = 0.0;
  double elpd_waic = 0.0, p_waic = 0.0, waic_deviance = 0.0;
  std::array<int, 4> k_counts{{0, 0, 0, 0}};
  Eigen::VectorXd elpd_i;  // per-patient LOO contributions; empty if failed
};

// Paired comparison of two models' per-patient LOO contributions over the
// same patients. The difference's standard error comes from the pointwise
// differences, so per-patient difficulty shared by both models (notably
// series length) cancels instead of inflating it.
struct ElpdDiff {
  double diff = 0.0;  // sum(a_i) - sum(b_i)
  double se = 0.0;    // sqrt(N * sample variance of a_i - b_i)
};
ElpdDiff elpd_loo_difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct CompareReport {
  std::vector<VariantResult> rows;
};

// Fits each variant on the same panel with identical priors and sampler
// budget and assembles predictive metrics. An empty variant list means the
// base shape plus the two single-disease-dynamics reductions. Variants with
// a 1x1 state space are rejected: with one global state there are no latent
// dynamics to compare.
CompareReport fit_variants(const PanelDataset& raw_panel,
                           const ModelSpec& base_model,
                           const ChainConfig& chains,
                           const std::vector<VariantSpec>& variants = {},
                           const ProgressFn& progress = nullptr);

void write_compare_csv(const CompareReport& report, const std::string& path);

// Text table: model, interactions flag, states, elpd, SE, WAIC; metrics of
// non-converged rows are parenthesized and the model name gets a dagger.
std::string render_compare_table(const CompareReport& report);

}  // namespace chmm
