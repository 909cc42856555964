#pragma once

#include <Eigen/Dense>
#include <vector>

#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"
#include "chmm/transforms.hpp"

namespace chmm {

// Marginal log-likelihood of one patient's series under the coupled chain,
// by the log-space forward recursion. The transition into time t is built
// from the covariate row at t-1.
double forward_loglik_patient(const Parameters& params,
                              const PatientSeries& patient);

// Same value via the forward-backward sweep, accumulating the exact
// gradient with respect to the constrained parameters into grad.
double forward_loglik_grad_patient(const Parameters& params,
                                   const PatientSeries& patient,
                                   ParamGrad& grad);

// Sum of all state paths by direct enumeration; oracle for the recursion.
// Refuses T > 8 (n_global^T terms).
double brute_force_loglik(const Parameters& params,
                          const PatientSeries& patient);

double total_loglik(const Parameters& params, const PanelDataset& data);

// (n_draws x N) matrix of per-patient log-likelihoods.
Eigen::MatrixXd pointwise_loglik(const std::vector<Parameters>& draws,
                                 const PanelDataset& data);

void write_pointwise_csv(const Eigen::MatrixXd& pointwise,
                         const PanelDataset& data, const std::string& path);
Eigen::MatrixXd load_pointwise_csv(const std::string& path);

// Log posterior density over the unconstrained space: constrained
// log-likelihood summed over patients, plus priors, plus the transform
// log-Jacobian. Non-finite evaluations return -infinity (sampler rejects).
class LogPosterior {
 public:
  LogPosterior(const PanelDataset& data, const UnconstrainedLayout& layout)
      : data_(&data), layout_(layout) {}

  int dim() const { return layout_.dim(); }
  const UnconstrainedLayout& layout() const { return layout_; }

  double value(const Eigen::VectorXd& theta) const;
  // Fills grad (same dimension); returns the value.
  double value_grad(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

 private:
  const PanelDataset* data_;
  UnconstrainedLayout layout_;
};

}  // namespace chmm
