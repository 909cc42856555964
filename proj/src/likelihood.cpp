#include "chmm/likelihood.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "chmm/errors.hpp"
#include "chmm/model.hpp"

namespace chmm {

namespace {

double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  return m + std::log((v.array() - m).exp().sum());
}

void check_patient(const Parameters& params, const PatientSeries& patient) {
  if (patient.x.cols() != params.beta.cols())
    throw ValidationError("patient " + patient.id + " has " +
                          std::to_string(patient.x.cols()) +
                          " covariates, model expects " +
                          std::to_string(params.beta.cols()));
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Reusable per-thread buffers: the sampler evaluates the gradient tens of
// thousands of times, so the recursion must not allocate per call.
struct Workspace {
  Eigen::MatrixXd la, emis, lb;  // G x T, column t
  Eigen::MatrixXd lgam;          // G x (G*T); step t occupies columns [tG,tG+G)
  Eigen::VectorXd bx;            // G*G covariate contribution to the logits
  Eigen::VectorXd ea, eb;        // per-disease emission terms
  int cap_g = 0, cap_t = 0;

  void ensure(int G, int T) {
    if (G > cap_g || T > cap_t) {
      cap_g = std::max(G, cap_g);
      cap_t = std::max(T, cap_t);
      la.resize(cap_g, cap_t);
      emis.resize(cap_g, cap_t);
      lb.resize(cap_g, cap_t);
      lgam.resize(cap_g, cap_g * cap_t);
      bx.resize(cap_g * cap_g);
      ea.resize(cap_g);
      eb.resize(cap_g);
    }
  }
};

thread_local Workspace t_ws;

// Fills emis (all t) and the lgam blocks (t >= 1), then runs the forward
// recursion into la. Returns the patient's log-likelihood.
double forward_fill(const Parameters& par, const PatientSeries& pat,
                    Workspace& ws) {
  const StateSpace& sp = par.space;
  const int G = sp.n_global();
  const int T = pat.T();
  const int p = par.n_covariates();
  ws.ensure(G, T);

  const double const_a = -std::log(par.sigma_a) - 0.91893853320467274;
  const double const_b = -std::log(par.sigma_b) - 0.91893853320467274;
  const double inv_sa = 1.0 / par.sigma_a;
  const double inv_sb = 1.0 / par.sigma_b;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < sp.n_a; ++s) {
      const double z = (pat.y_a[t] - par.mu_a[s]) * inv_sa;
      ws.ea[s] = const_a - 0.5 * z * z;
    }
    for (int s = 0; s < sp.n_b; ++s) {
      const double z = (pat.y_b[t] - par.mu_b[s]) * inv_sb;
      ws.eb[s] = const_b - 0.5 * z * z;
    }
    for (int g = 0; g < G; ++g)
      ws.emis(g, t) = ws.ea[g / sp.n_b] + ws.eb[g % sp.n_b];
  }

  for (int t = 1; t < T; ++t) {
    if (p > 0)
      ws.bx.head(G * G).noalias() = par.beta * pat.x.row(t - 1).transpose();
    auto lg = ws.lgam.block(0, t * G, G, G);
    for (int j = 0; j < G; ++j) {
      double m = 0.0;  // the zeroed diagonal entry is always present
      for (int k = 0; k < G; ++k) {
        double e = 0.0;
        if (j != k) {
          e = par.alpha(j, k);
          if (p > 0) e += ws.bx[j * G + k];
          if (!std::isfinite(e))
            throw NumericError("non-finite transition logit at (" +
                               std::to_string(j) + "," + std::to_string(k) +
                               ")");
        }
        lg(j, k) = e;
        if (e > m) m = e;
      }
      double sum = 0.0;
      for (int k = 0; k < G; ++k) sum += std::exp(lg(j, k) - m);
      const double lse = m + std::log(sum);
      for (int k = 0; k < G; ++k) lg(j, k) -= lse;
    }
  }

  for (int g = 0; g < G; ++g)
    ws.la(g, 0) = std::log(par.pi[g]) + ws.emis(g, 0);
  for (int t = 1; t < T; ++t) {
    const auto lg = ws.lgam.block(0, t * G, G, G);
    for (int k = 0; k < G; ++k) {
      double m = kNegInf;
      for (int j = 0; j < G; ++j)
        m = std::max(m, ws.la(j, t - 1) + lg(j, k));
      double v;
      if (m == kNegInf) {
        v = kNegInf;  // state unreachable: a legitimate log-zero
      } else {
        double sum = 0.0;
        for (int j = 0; j < G; ++j)
          sum += std::exp(ws.la(j, t - 1) + lg(j, k) - m);
        v = m + std::log(sum) + ws.emis(k, t);
      }
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericError("non-finite forward value at t=" +
                           std::to_string(t + 1));
      ws.la(k, t) = v;
    }
  }
  const double ll = logsumexp(ws.la.col(T - 1).head(G));
  if (std::isnan(ll))
    throw NumericError("forward log-likelihood is NaN for patient " + pat.id);
  return ll;
}

}  // namespace

double forward_loglik_patient(const Parameters& params,
                              const PatientSeries& patient) {
  check_patient(params, patient);
  return forward_fill(params, patient, t_ws);
}

double forward_loglik_grad_patient(const Parameters& params,
                                   const PatientSeries& patient,
                                   ParamGrad& grad) {
  check_patient(params, patient);
  const StateSpace& sp = params.space;
  const int G = sp.n_global();
  const int T = patient.T();
  const int p = params.n_covariates();

  Workspace& ws = t_ws;
  const double loglik = forward_fill(params, patient, ws);
  if (!std::isfinite(loglik))
    throw NumericError("non-finite log-likelihood for patient " + patient.id);

  // Backward pass over the stored emission and transition tables.
  for (int g = 0; g < G; ++g) ws.lb(g, T - 1) = 0.0;
  for (int t = T - 2; t >= 0; --t) {
    const auto lg = ws.lgam.block(0, (t + 1) * G, G, G);
    for (int j = 0; j < G; ++j) {
      double m = kNegInf;
      for (int k = 0; k < G; ++k)
        m = std::max(m, lg(j, k) + ws.emis(k, t + 1) + ws.lb(k, t + 1));
      if (m == kNegInf) {
        ws.lb(j, t) = kNegInf;
        continue;
      }
      double sum = 0.0;
      for (int k = 0; k < G; ++k)
        sum += std::exp(lg(j, k) + ws.emis(k, t + 1) + ws.lb(k, t + 1) - m);
      ws.lb(j, t) = m + std::log(sum);
    }
  }

  // State marginals and the chain-rule accumulation for the emissions.
  const double inv_sa = 1.0 / params.sigma_a;
  const double inv_sb = 1.0 / params.sigma_b;
  for (int t = 0; t < T; ++t) {
    for (int g = 0; g < G; ++g) {
      const double post = std::exp(ws.la(g, t) + ws.lb(g, t) - loglik);
      if (post == 0.0) continue;
      const int s_a = g / sp.n_b;
      const int s_b = g % sp.n_b;
      const double za = (patient.y_a[t] - params.mu_a[s_a]) * inv_sa;
      const double zb = (patient.y_b[t] - params.mu_b[s_b]) * inv_sb;
      grad.d_mu_a[s_a] += post * za * inv_sa;
      grad.d_mu_b[s_b] += post * zb * inv_sb;
      grad.d_sigma_a += post * (za * za - 1.0) * inv_sa;
      grad.d_sigma_b += post * (zb * zb - 1.0) * inv_sb;
    }
  }
  // d loglik / d pi_g, written without dividing by pi_g.
  for (int g = 0; g < G; ++g)
    grad.d_pi[g] += std::exp(ws.emis(g, 0) + ws.lb(g, 0) - loglik);

  // Transition adjoints: for each step, xi(j,k) is the joint posterior of
  // (S_{t-1}=j, S_t=k); the softmax pullback is xi - row_posterior * Gamma.
  for (int t = 1; t < T; ++t) {
    const auto lg = ws.lgam.block(0, t * G, G, G);
    for (int j = 0; j < G; ++j) {
      double rowpost = 0.0;
      for (int k = 0; k < G; ++k) {
        const double xi = std::exp(ws.la(j, t - 1) + lg(j, k) +
                                   ws.emis(k, t) + ws.lb(k, t) - loglik);
        ws.bx[k] = xi;  // reuse as a G-length scratch row
        rowpost += xi;
      }
      for (int k = 0; k < G; ++k) {
        if (j == k) continue;  // reference category carries no parameters
        const double d = ws.bx[k] - rowpost * std::exp(lg(j, k));
        grad.d_alpha(j, k) += d;
        if (p > 0)
          grad.d_beta.row(j * G + k) += d * patient.x.row(t - 1);
      }
    }
  }
  return loglik;
}

double brute_force_loglik(const Parameters& params,
                          const PatientSeries& patient) {
  check_patient(params, patient);
  const int G = params.space.n_global();
  const int T = patient.T();
  if (T > 8)
    throw ValidationError("path enumeration refused for T=" +
                          std::to_string(T) + " (limit 8)");

  std::vector<Eigen::MatrixXd> lgam(T);
  Eigen::MatrixXd emis(G, T);
  for (int t = 0; t < T; ++t) {
    emis.col(t) = emission_logpdf_all(params, patient.y_a[t], patient.y_b[t]);
    if (t >= 1) {
      Eigen::MatrixXd gam = transition_matrix(params, patient.x.row(t - 1));
      lgam[t] = gam.array().log();
    }
  }

  long n_paths = 1;
  for (int t = 0; t < T; ++t) n_paths *= G;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(n_paths);
  std::vector<int> path(T);
  for (long code = 0; code < n_paths; ++code) {
    long c = code;
    for (int t = 0; t < T; ++t) {
      path[t] = static_cast<int>(c % G);
      c /= G;
    }
    double lp = std::log(params.pi[path[0]]) + emis(path[0], 0);
    for (int t = 1; t < T; ++t)
      lp += lgam[t](path[t - 1], path[t]) + emis(path[t], t);
    terms.push_back(lp);
    if (lp > best) best = lp;
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double lp : terms) acc += std::exp(lp - best);
  return best + std::log(acc);
}

double total_loglik(const Parameters& params, const PanelDataset& data) {
  double total = 0.0;
  for (const auto& pat : data.patients)
    total += forward_loglik_patient(params, pat);
  return total;
}

Eigen::MatrixXd pointwise_loglik(const std::vector<Parameters>& draws,
                                 const PanelDataset& data) {
  const int D = static_cast<int>(draws.size());
  const int N = data.n_patients();
  Eigen::MatrixXd out(D, N);
  for (int d = 0; d < D; ++d)
    for (int i = 0; i < N; ++i)
      out(d, i) = forward_loglik_patient(draws[d], data.patients[i]);
  return out;
}

void write_pointwise_csv(const Eigen::MatrixXd& pointwise,
                         const PanelDataset& data, const std::string& path) {
  if (pointwise.cols() != data.n_patients())
    throw ValidationError("pointwise matrix does not match patient count");
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write pointwise file: " + path);
  out << "draw,patient_id,loglik\n";
  char buf[64];
  for (int d = 0; d < pointwise.rows(); ++d)
    for (int i = 0; i < pointwise.cols(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", pointwise(d, i));
      out << (d + 1) << "," << data.patients[i].id << "," << buf << "\n";
    }
}

Eigen::MatrixXd load_pointwise_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open pointwise file: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line.rfind("draw,patient_id,loglik", 0) != 0)
    throw LoadError("pointwise file must start with draw,patient_id,loglik");
  std::map<int, std::vector<double>> rows;
  std::vector<std::string> patient_order;
  std::map<std::string, int> patient_col;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string draw_s, pid, ll_s;
    if (!std::getline(ss, draw_s, ',') || !std::getline(ss, pid, ',') ||
        !std::getline(ss, ll_s))
      throw LoadError("pointwise line " + std::to_string(line_no) +
                      " is malformed");
    int d;
    double ll;
    try {
      d = std::stoi(draw_s);
      ll = std::stod(ll_s);
    } catch (const std::exception&) {
      throw LoadError("pointwise line " + std::to_string(line_no) +
                      " has unparseable numbers");
    }
    if (patient_col.find(pid) == patient_col.end()) {
      patient_col[pid] = static_cast<int>(patient_order.size());
      patient_order.push_back(pid);
    }
    auto& row = rows[d];
    if (row.size() <= static_cast<std::size_t>(patient_col[pid]))
      row.resize(patient_col[pid] + 1,
                 std::numeric_limits<double>::quiet_NaN());
    row[patient_col[pid]] = ll;
  }
  const int D = static_cast<int>(rows.size());
  const int N = static_cast<int>(patient_order.size());
  Eigen::MatrixXd out(D, N);
  int r = 0;
  for (const auto& [d, row] : rows) {
    if (static_cast<int>(row.size()) != N)
      throw LoadError("pointwise draw " + std::to_string(d) +
                      " is missing patients");
    for (int i = 0; i < N; ++i) {
      if (std::isnan(row[i]))
        throw LoadError("pointwise draw " + std::to_string(d) +
                        " is missing a patient entry");
      out(r, i) = row[i];
    }
    ++r;
  }
  return out;
}

double LogPosterior::value(const Eigen::VectorXd& theta) const {
  try {
    ConstrainResult cr = constrain(theta, layout_);
    double v = cr.log_jacobian + log_prior(cr.params);
    for (const auto& pat : data_->patients)
      v += forward_loglik_patient(cr.params, pat);
    if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
    return v;
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

double LogPosterior::value_grad(const Eigen::VectorXd& theta,
                                Eigen::VectorXd& grad) const {
  grad = Eigen::VectorXd::Zero(layout_.dim());
  try {
    ConstrainResult cr = constrain(theta, layout_);
    ParamGrad pg(layout_);
    double v = cr.log_jacobian + log_prior(cr.params);
    log_prior_grad(cr.params, pg);
    for (const auto& pat : data_->patients)
      v += forward_loglik_grad_patient(cr.params, pat, pg);
    if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
    grad = pullback_gradient(theta, layout_, cr.params, pg);
    if (!grad.allFinite()) {
      grad.setZero();
      return -std::numeric_limits<double>::infinity();
    }
    return v;
  } catch (const NumericError&) {
    grad.setZero();
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace chmm
