#pragma once

#include <Eigen/Dense>

#include "chmm/parameters.hpp"

namespace chmm {

// Transition logits for one time step: eta(j,k) = alpha(j,k) + x'beta_jk for
// j != k, with eta(j,j) = 0 as the reference category.
Eigen::MatrixXd build_eta(const Parameters& params,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

// Row-wise softmax with max-subtraction; rows sum to 1.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta);

// transition_matrix = softmax_rows(build_eta(...)).
Eigen::MatrixXd transition_matrix(const Parameters& params,
                                  const Eigen::Ref<const Eigen::VectorXd>& x);

// Log of the same matrix, computed log-sum-exp-stably; preferred in the
// likelihood hot path.
Eigen::MatrixXd log_transition_matrix(const Parameters& params,
                                      const Eigen::Ref<const Eigen::VectorXd>& x);

// log N(y | mu, sigma^2).
double normal_logpdf(double y, double mu, double sigma);

// Joint emission log-density of (y_a, y_b) in global state g: the two
// channels are conditionally independent given the state pair.
double emission_logpdf(const Parameters& params, int g, double y_a, double y_b);

// Emission log-densities for all global states at once; length n_global.
Eigen::VectorXd emission_logpdf_all(const Parameters& params, double y_a,
                                    double y_b);

}  // namespace chmm
