#include "chmm/transforms.hpp"

#include <cmath>
#include <numbers>

#include "chmm/errors.hpp"

namespace chmm {

namespace {

double inv_logit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

constexpr double half_log_2pi = 0.91893853320467274;  // 0.5*log(2*pi)

}  // namespace

std::vector<std::string> UnconstrainedLayout::coordinate_names() const {
  std::vector<std::string> names;
  names.reserve(dim());
  names.push_back("mu_a.1");
  for (int i = 1; i < space.n_a; ++i)
    names.push_back("gap_a." + std::to_string(i + 1));
  names.push_back("mu_b.1");
  for (int i = 1; i < space.n_b; ++i)
    names.push_back("gap_b." + std::to_string(i + 1));
  names.push_back("log_sigma_a");
  names.push_back("log_sigma_b");
  const int G = space.n_global();
  for (int k = 0; k < G - 1; ++k)
    names.push_back("stick." + std::to_string(k + 1));
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        names.push_back("alpha." + std::to_string(j + 1) + "." +
                        std::to_string(k + 1));
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < p; ++c)
          names.push_back("beta." + std::to_string(j + 1) + "." +
                          std::to_string(k + 1) + "." + std::to_string(c + 1));
  return names;
}

ParamGrad::ParamGrad(const UnconstrainedLayout& layout) {
  const int G = layout.space.n_global();
  d_mu_a = Eigen::VectorXd::Zero(layout.space.n_a);
  d_mu_b = Eigen::VectorXd::Zero(layout.space.n_b);
  d_pi = Eigen::VectorXd::Zero(G);
  d_alpha = Eigen::MatrixXd::Zero(G, G);
  d_beta = Eigen::MatrixXd::Zero(G * G, layout.p);
}

void ParamGrad::set_zero() {
  d_mu_a.setZero();
  d_mu_b.setZero();
  d_sigma_a = 0.0;
  d_sigma_b = 0.0;
  d_pi.setZero();
  d_alpha.setZero();
  d_beta.setZero();
}

ParamGrad& ParamGrad::operator+=(const ParamGrad& other) {
  d_mu_a += other.d_mu_a;
  d_mu_b += other.d_mu_b;
  d_sigma_a += other.d_sigma_a;
  d_sigma_b += other.d_sigma_b;
  d_pi += other.d_pi;
  d_alpha += other.d_alpha;
  d_beta += other.d_beta;
  return *this;
}

namespace {

void unconstrain_ordered(const Eigen::VectorXd& mu, Eigen::VectorXd& theta,
                         int& pos) {
  theta[pos++] = mu[0];
  for (int i = 1; i < mu.size(); ++i) theta[pos++] = std::log(mu[i] - mu[i - 1]);
}

}  // namespace

Eigen::VectorXd unconstrain(const Parameters& params) {
  params.validate();
  UnconstrainedLayout layout(params.space, params.n_covariates());
  const int G = params.space.n_global();
  Eigen::VectorXd theta(layout.dim());
  int pos = 0;
  unconstrain_ordered(params.mu_a, theta, pos);
  unconstrain_ordered(params.mu_b, theta, pos);
  theta[pos++] = std::log(params.sigma_a);
  theta[pos++] = std::log(params.sigma_b);
  double r = 1.0;
  for (int k = 0; k < G - 1; ++k) {
    if (params.pi[k] <= 0.0 || r - params.pi[k] <= 0.0)
      throw ValidationError(
          "pi must have strictly positive entries to unconstrain");
    const double z = params.pi[k] / r;
    theta[pos++] = std::log(z / (1.0 - z)) + std::log(double(G - k - 1));
    r -= params.pi[k];
  }
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) theta[pos++] = params.alpha(j, k);
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < params.n_covariates(); ++c)
          theta[pos++] = params.beta(j * G + k, c);
  return theta;
}

ConstrainResult constrain(const Eigen::VectorXd& theta,
                          const UnconstrainedLayout& layout) {
  if (theta.size() != layout.dim())
    throw ValidationError("unconstrained vector has dimension " +
                          std::to_string(theta.size()) + ", layout needs " +
                          std::to_string(layout.dim()));
  const StateSpace& sp = layout.space;
  const int G = sp.n_global();
  ConstrainResult res;
  Parameters& par = res.params;
  par.space = sp;
  double logjac = 0.0;
  int pos = 0;

  par.mu_a.resize(sp.n_a);
  par.mu_a[0] = theta[pos++];
  for (int i = 1; i < sp.n_a; ++i) {
    const double t = theta[pos++];
    par.mu_a[i] = par.mu_a[i - 1] + std::exp(t);
    logjac += t;
  }
  par.mu_b.resize(sp.n_b);
  par.mu_b[0] = theta[pos++];
  for (int i = 1; i < sp.n_b; ++i) {
    const double t = theta[pos++];
    par.mu_b[i] = par.mu_b[i - 1] + std::exp(t);
    logjac += t;
  }

  const double ls_a = theta[pos++];
  const double ls_b = theta[pos++];
  par.sigma_a = std::exp(ls_a);
  par.sigma_b = std::exp(ls_b);
  logjac += ls_a + ls_b;

  par.pi.resize(G);
  double r = 1.0;
  for (int k = 0; k < G - 1; ++k) {
    const double z = inv_logit(theta[pos++] - std::log(double(G - k - 1)));
    par.pi[k] = r * z;
    logjac += std::log(z) + std::log1p(-z) + std::log(r);
    r *= (1.0 - z);
  }
  par.pi[G - 1] = r;

  par.alpha = Eigen::MatrixXd::Zero(G, G);
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) par.alpha(j, k) = theta[pos++];
  par.beta = Eigen::MatrixXd::Zero(G * G, layout.p);
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < layout.p; ++c)
          par.beta(j * G + k, c) = theta[pos++];

  res.log_jacobian = logjac;
  return res;
}

double log_prior(const Parameters& params) {
  const int G = params.space.n_global();
  double lp = 0.0;
  auto normal_term = [](double v, double sd) {
    const double z = v / sd;
    return -0.5 * z * z - std::log(sd) - half_log_2pi;
  };
  for (int i = 0; i < params.mu_a.size(); ++i)
    lp += normal_term(params.mu_a[i], 10.0);
  for (int i = 0; i < params.mu_b.size(); ++i)
    lp += normal_term(params.mu_b[i], 10.0);
  // half-normal on the positive reals: normal density times 2
  lp += std::numbers::ln2 - half_log_2pi - 0.5 * params.sigma_a * params.sigma_a;
  lp += std::numbers::ln2 - half_log_2pi - 0.5 * params.sigma_b * params.sigma_b;
  lp += std::lgamma(double(G));  // flat Dirichlet normalizer
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) {
        lp += normal_term(params.alpha(j, k), 2.5);
        for (int c = 0; c < params.n_covariates(); ++c)
          lp += normal_term(params.beta(j * G + k, c), 1.0);
      }
  return lp;
}

void log_prior_grad(const Parameters& params, ParamGrad& grad) {
  const int G = params.space.n_global();
  grad.d_mu_a -= params.mu_a / 100.0;
  grad.d_mu_b -= params.mu_b / 100.0;
  grad.d_sigma_a -= params.sigma_a;
  grad.d_sigma_b -= params.sigma_b;
  // flat Dirichlet contributes nothing to d_pi
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) {
        grad.d_alpha(j, k) -= params.alpha(j, k) / 6.25;
        grad.d_beta.row(j * G + k) -= params.beta.row(j * G + k);
      }
}

Eigen::VectorXd pullback_gradient(const Eigen::VectorXd& theta,
                                  const UnconstrainedLayout& layout,
                                  const Parameters& params,
                                  const ParamGrad& grad) {
  const StateSpace& sp = layout.space;
  const int G = sp.n_global();
  Eigen::VectorXd out(layout.dim());
  int pos = 0;

  // Ordered means: mu[i] depends on theta[j] for all j <= i, so the adjoint
  // of gap j is the suffix sum of mean gradients times the gap. The +1 terms
  // are the gradient of the log-Jacobian itself.
  auto ordered_block = [&](const Eigen::VectorXd& g_mu,
                           const Eigen::VectorXd& mu) {
    double suffix = g_mu.sum();
    out[pos++] = suffix;
    for (int i = 1; i < mu.size(); ++i) {
      suffix -= g_mu[i - 1];
      out[pos] = suffix * (mu[i] - mu[i - 1]) + 1.0;
      ++pos;
    }
  };
  ordered_block(grad.d_mu_a, params.mu_a);
  ordered_block(grad.d_mu_b, params.mu_b);

  out[pos++] = grad.d_sigma_a * params.sigma_a + 1.0;
  out[pos++] = grad.d_sigma_b * params.sigma_b + 1.0;

  // Stick-breaking: replay the forward recurrences, then run the reverse
  // sweep including the Jacobian's own dependence on (z, r).
  {
    Eigen::VectorXd z(G - 1), rvec(G);
    rvec[0] = 1.0;
    for (int k = 0; k < G - 1; ++k) {
      z[k] = inv_logit(theta[layout.offset_pi() + k] -
                       std::log(double(G - k - 1)));
      rvec[k + 1] = rvec[k] * (1.0 - z[k]);
    }
    double gr_next = grad.d_pi[G - 1];  // pi[G-1] = r[G-1]
    Eigen::VectorXd gy(G - 1);
    for (int k = G - 2; k >= 0; --k) {
      const double gz = grad.d_pi[k] * rvec[k] - gr_next * rvec[k] +
                        (1.0 / z[k] - 1.0 / (1.0 - z[k]));
      const double gr = grad.d_pi[k] * z[k] + gr_next * (1.0 - z[k]) +
                        1.0 / rvec[k];
      gy[k] = gz * z[k] * (1.0 - z[k]);
      gr_next = gr;
    }
    for (int k = 0; k < G - 1; ++k) out[pos++] = gy[k];
  }

  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) out[pos++] = grad.d_alpha(j, k);
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < layout.p; ++c)
          out[pos++] = grad.d_beta(j * G + k, c);
  return out;
}

QRBasis compute_qr(const PanelDataset& data) {
  const int p = data.n_covariates();
  QRBasis qr;
  if (p == 0) {
    qr.r_star.resize(0, 0);
    qr.r_star_inv.resize(0, 0);
    return qr;
  }
  const int n = data.total_rows();
  if (n <= p)
    throw ValidationError("need more rows than covariates for the QR basis");
  Eigen::MatrixXd X(n, p);
  int row = 0;
  for (const auto& pat : data.patients) {
    X.middleRows(row, pat.T()) = pat.x;
    row += pat.T();
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> pivoted(X);
  pivoted.setThreshold(1e-10);
  if (pivoted.rank() < p) {
    const auto& perm = pivoted.colsPermutation().indices();
    std::string cols;
    for (int i = pivoted.rank(); i < p; ++i) {
      if (!cols.empty()) cols += ", ";
      cols += data.covariate_names[perm[i]];
    }
    throw ValidationError(
        "covariate matrix is rank deficient; collinear column(s): " + cols);
  }

  Eigen::HouseholderQR<Eigen::MatrixXd> hqr(X);
  Eigen::MatrixXd R =
      hqr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  const double scale = std::sqrt(double(n - 1));
  Eigen::VectorXd sign(p);
  for (int j = 0; j < p; ++j) sign[j] = (R(j, j) < 0.0) ? -1.0 : 1.0;
  qr.r_star = sign.asDiagonal() * R / scale;
  qr.r_star_inv = qr.r_star.triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(p, p));
  return qr;
}

PanelDataset apply_qr(const PanelDataset& data, const QRBasis& qr) {
  const int p = data.n_covariates();
  if (p == 0) return data;
  // x_row in the Q* basis solves q = (R*^-T x)' i.e. Q* = X R*^-1.
  PanelDataset out = data;
  for (auto& pat : out.patients) pat.x = pat.x * qr.r_star_inv;
  for (auto& name : out.covariate_names) name = "q_" + name;
  return out;
}

Eigen::MatrixXd beta_from_tilde(const Eigen::MatrixXd& beta_tilde,
                                const QRBasis& qr) {
  if (beta_tilde.cols() == 0) return beta_tilde;
  return beta_tilde * qr.r_star_inv.transpose();
}

}  // namespace chmm
