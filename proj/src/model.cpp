#include "chmm/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "chmm/errors.hpp"

namespace chmm {

Eigen::MatrixXd build_eta(const Parameters& params,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  const int G = params.space.n_global();
  if (x.size() != params.beta.cols()) {
    throw ValidationError("covariate vector has dimension " +
                          std::to_string(x.size()) + ", model expects " +
                          std::to_string(params.beta.cols()));
  }
  Eigen::MatrixXd eta = params.alpha;
  if (x.size() > 0) {
    // Row j*G+k of beta carries the (j,k) coefficients, so beta*x unrolls to
    // the same row-major order as alpha.
    Eigen::VectorXd contrib = params.beta * x;
    for (int j = 0; j < G; ++j)
      for (int k = 0; k < G; ++k) eta(j, k) += contrib[j * G + k];
  }
  eta.diagonal().setZero();
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (!std::isfinite(eta(j, k)))
        throw NumericError("non-finite transition logit at (" +
                           std::to_string(j) + "," + std::to_string(k) + ")");
  return eta;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd out(eta.rows(), eta.cols());
  for (int j = 0; j < eta.rows(); ++j) {
    const double m = eta.row(j).maxCoeff();
    Eigen::ArrayXd e = (eta.row(j).array() - m).exp();
    out.row(j) = e / e.sum();
  }
  return out;
}

Eigen::MatrixXd transition_matrix(const Parameters& params,
                                  const Eigen::Ref<const Eigen::VectorXd>& x) {
  return softmax_rows(build_eta(params, x));
}

Eigen::MatrixXd log_transition_matrix(
    const Parameters& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::MatrixXd eta = build_eta(params, x);
  for (int j = 0; j < eta.rows(); ++j) {
    const double m = eta.row(j).maxCoeff();
    const double lse = m + std::log((eta.row(j).array() - m).exp().sum());
    eta.row(j).array() -= lse;
  }
  return eta;
}

double normal_logpdf(double y, double mu, double sigma) {
  static const double log_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double z = (y - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - log_sqrt_2pi;
}

double emission_logpdf(const Parameters& params, int g, double y_a,
                       double y_b) {
  const int s_a = params.space.state_a_of(g);
  const int s_b = params.space.state_b_of(g);
  return normal_logpdf(y_a, params.mu_a[s_a], params.sigma_a) +
         normal_logpdf(y_b, params.mu_b[s_b], params.sigma_b);
}

Eigen::VectorXd emission_logpdf_all(const Parameters& params, double y_a,
                                    double y_b) {
  const StateSpace& sp = params.space;
  Eigen::VectorXd la(sp.n_a), lb(sp.n_b);
  for (int s = 0; s < sp.n_a; ++s)
    la[s] = normal_logpdf(y_a, params.mu_a[s], params.sigma_a);
  for (int s = 0; s < sp.n_b; ++s)
    lb[s] = normal_logpdf(y_b, params.mu_b[s], params.sigma_b);
  Eigen::VectorXd out(sp.n_global());
  for (int g = 0; g < sp.n_global(); ++g)
    out[g] = la[g / sp.n_b] + lb[g % sp.n_b];
  return out;
}

}  // namespace chmm
