#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "chmm/nuts.hpp"

namespace chmm {

// Split-chain potential scale reduction. Each input vector is one chain's
// series of a single parameter. Returns NaN when within-chain variance is
// zero or fewer than 4 iterations are available (undefined, not an error).
double compute_rhat(const std::vector<Eigen::VectorXd>& chains);

// Effective sample size from chain-averaged autocorrelations with the
// initial-monotone-sequence truncation. NaN when undefined.
double compute_ess(const std::vector<Eigen::VectorXd>& chains);

struct DiagnosticsReport {
  std::vector<std::string> names;
  Eigen::VectorXd rhat, ess;
  Eigen::VectorXd mean, sd, q5, q25, q50, q75, q95;
  int divergences = 0;
  int n_chains = 0, n_iter = 0;

  // True when every parameter has a defined rhat below the threshold.
  bool converged(double threshold = 1.1) const;
};

// Per-column diagnostics over a set of chain matrices (each n_iter x dim)
// sharing the column naming in names.
DiagnosticsReport diagnose(const std::vector<Eigen::MatrixXd>& chains,
                           const std::vector<std::string>& names,
                           int divergences);

void write_diagnostics_csv(const DiagnosticsReport& report,
                           const std::string& path);

}  // namespace chmm
