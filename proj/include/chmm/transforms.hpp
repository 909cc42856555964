#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"

namespace chmm {

// Layout of the flat unconstrained vector the sampler works on:
//   [ mu_a[0], log-gaps of mu_a (n_a-1),
//     mu_b[0], log-gaps of mu_b (n_b-1),
//     log sigma_a, log sigma_b,
//     stick-breaking coordinates of pi (G-1),
//     alpha off-diagonals row-major (G(G-1)),
//     beta rows row-major per off-diagonal (j,k), p entries each ]
struct UnconstrainedLayout {
  StateSpace space;
  int p = 0;

  UnconstrainedLayout() = default;
  UnconstrainedLayout(const StateSpace& s, int n_covariates)
      : space(s), p(n_covariates) {}

  int n_mean() const { return space.n_a + space.n_b; }
  int offset_sigma() const { return n_mean(); }
  int offset_pi() const { return n_mean() + 2; }
  int offset_alpha() const { return offset_pi() + space.n_global() - 1; }
  int offset_beta() const {
    const int G = space.n_global();
    return offset_alpha() + G * (G - 1);
  }
  int dim() const {
    const int G = space.n_global();
    return offset_beta() + G * (G - 1) * p;
  }

  // Coordinate names in layout order, e.g. "mu_a.1", "gap_a.2", "stick.1",
  // "alpha.1.2" (1-based state labels).
  std::vector<std::string> coordinate_names() const;
};

struct ConstrainResult {
  Parameters params;
  double log_jacobian = 0.0;
};

// Gradient of a scalar function of the constrained parameters; the shapes
// mirror Parameters. Accumulated across patients by the likelihood and
// pulled back through the transform.
struct ParamGrad {
  Eigen::VectorXd d_mu_a, d_mu_b;
  double d_sigma_a = 0.0, d_sigma_b = 0.0;
  Eigen::VectorXd d_pi;
  Eigen::MatrixXd d_alpha;
  Eigen::MatrixXd d_beta;

  explicit ParamGrad(const UnconstrainedLayout& layout);
  void set_zero();
  ParamGrad& operator+=(const ParamGrad& other);
};

Eigen::VectorXd unconstrain(const Parameters& params);

// Inverse map; every finite theta yields valid Parameters. log_jacobian sums
// the mean-gap, sigma, and stick-breaking terms.
ConstrainResult constrain(const Eigen::VectorXd& theta,
                          const UnconstrainedLayout& layout);

// Log density of the priors in the constrained space (normalizing constants
// included): N(0,10^2) on means, half-N(0,1) on sigmas, flat Dirichlet on
// pi, N(0,2.5^2) on alpha, N(0,1) on beta coordinates.
double log_prior(const Parameters& params);

// Adds d log_prior / d params into grad.
void log_prior_grad(const Parameters& params, ParamGrad& grad);

// Chain rule: maps a constrained-space gradient to unconstrained
// coordinates and adds d log_jacobian / d theta.
Eigen::VectorXd pullback_gradient(const Eigen::VectorXd& theta,
                                  const UnconstrainedLayout& layout,
                                  const Parameters& params,
                                  const ParamGrad& grad);

// Thin QR reparameterization of the stacked covariate matrix. With n total
// rows, Q* = Q*sqrt(n-1) and R* = R/sqrt(n-1) so X = Q* R*; the sampler
// works on b_tilde over Q* columns and reporting maps beta = R*^-1 b_tilde.
struct QRBasis {
  Eigen::MatrixXd r_star;      // p x p upper triangular, positive diagonal
  Eigen::MatrixXd r_star_inv;  // p x p
};

QRBasis compute_qr(const PanelDataset& data);

// Dataset with covariate rows mapped onto the Q* basis.
PanelDataset apply_qr(const PanelDataset& data, const QRBasis& qr);

// Reporting map for one draw's coefficient block: each off-diagonal row of
// beta_tilde (as stored, (G*G) x p) is multiplied by R*^-1.
Eigen::MatrixXd beta_from_tilde(const Eigen::MatrixXd& beta_tilde,
                                const QRBasis& qr);

}  // namespace chmm
