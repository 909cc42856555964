#pragma once

#include <Eigen/Dense>
#include <string>

#include "chmm/state_space.hpp"

namespace chmm {

// Constrained model parameters.
//
// beta is stored as a (G*G) x p matrix whose row j*G+k holds the coefficient
// vector for the j -> k transition; diagonal rows are structurally zero so
// logit assembly needs no index remapping.
struct Parameters {
  StateSpace space;
  Eigen::VectorXd mu_a;    // length n_a, strictly increasing
  Eigen::VectorXd mu_b;    // length n_b, strictly increasing
  double sigma_a = 1.0;
  double sigma_b = 1.0;
  Eigen::VectorXd pi;      // length n_global, simplex
  Eigen::MatrixXd alpha;   // n_global x n_global, zero diagonal
  Eigen::MatrixXd beta;    // (n_global*n_global) x p, zero diagonal rows

  int n_covariates() const { return static_cast<int>(beta.cols()); }

  // Throws ValidationError on the first violated invariant.
  void validate() const;

  // Round-trip JSON with fields mu_a, mu_b, sigma_a, sigma_b, pi, alpha,
  // beta (nested [j][k][c]), n_a, n_b. save writes with full precision.
  static Parameters load_json(const std::string& path);
  void save_json(const std::string& path) const;
  static Parameters from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// Zero-initialized parameters of conforming shapes (pi uniform, mu at 0,
// sigma at 1); useful as a template to fill in.
Parameters make_empty_parameters(const StateSpace& space, int p);

}  // namespace chmm
