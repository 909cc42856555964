#include "chmm/inference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "chmm/errors.hpp"
#include "chmm/model.hpp"
#include "chmm/rng.hpp"
#include "chmm/stats.hpp"

namespace chmm {

std::vector<int> viterbi(const Parameters& params,
                         const PatientSeries& patient) {
  if (patient.x.cols() != params.beta.cols())
    throw ValidationError("patient " + patient.id +
                          " covariate dimension does not match the model");
  const int G = params.space.n_global();
  const int T = patient.T();

  Eigen::VectorXd delta =
      params.pi.array().log() +
      emission_logpdf_all(params, patient.y_a[0], patient.y_b[0]).array();
  Eigen::MatrixXi back(G, T);
  Eigen::VectorXd next(G);
  for (int t = 1; t < T; ++t) {
    const Eigen::MatrixXd lgamma =
        log_transition_matrix(params, patient.x.row(t - 1));
    const Eigen::VectorXd e =
        emission_logpdf_all(params, patient.y_a[t], patient.y_b[t]);
    for (int k = 0; k < G; ++k) {
      int arg = 0;
      double best = delta[0] + lgamma(0, k);
      for (int j = 1; j < G; ++j) {
        const double v = delta[j] + lgamma(j, k);
        if (v > best) {  // strict: ties keep the lower index
          best = v;
          arg = j;
        }
      }
      next[k] = best + e[k];
      back(k, t) = arg;
    }
    delta = next;
  }

  std::vector<int> path(T);
  int arg = 0;
  for (int g = 1; g < G; ++g)
    if (delta[g] > delta[arg]) arg = g;
  path[T - 1] = arg;
  for (int t = T - 1; t >= 1; --t) path[t - 1] = back(path[t], t);
  return path;
}

std::vector<int> brute_force_viterbi(const Parameters& params,
                                     const PatientSeries& patient) {
  const int G = params.space.n_global();
  const int T = patient.T();
  if (T > 8)
    throw ValidationError("path enumeration refused for T=" +
                          std::to_string(T) + " (limit 8)");
  Eigen::MatrixXd emis(G, T);
  std::vector<Eigen::MatrixXd> lgam(T);
  for (int t = 0; t < T; ++t) {
    emis.col(t) = emission_logpdf_all(params, patient.y_a[t], patient.y_b[t]);
    if (t >= 1)
      lgam[t] = log_transition_matrix(params, patient.x.row(t - 1));
  }
  long n_paths = 1;
  for (int t = 0; t < T; ++t) n_paths *= G;

  // Ascending code order makes path[T-1] the most significant digit, so the
  // first maximum encountered matches the dynamic program's tie rule
  // (lowest final state first, then lowest predecessors).
  std::vector<int> best_path(T), path(T);
  double best = -std::numeric_limits<double>::infinity();
  for (long code = 0; code < n_paths; ++code) {
    long c = code;
    for (int t = 0; t < T; ++t) {
      path[t] = static_cast<int>(c % G);
      c /= G;
    }
    double lp = std::log(params.pi[path[0]]) + emis(path[0], 0);
    for (int t = 1; t < T; ++t)
      lp += lgam[t](path[t - 1], path[t]) + emis(path[t], t);
    if (lp > best) {
      best = lp;
      best_path = path;
    }
  }
  return best_path;
}

void write_decode_csv(const Parameters& params, const PanelDataset& data,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write decode file: " + path);
  out << "patient_id,t,state_a,state_b,global\n";
  const StateSpace& sp = params.space;
  for (const auto& pat : data.patients) {
    const std::vector<int> states = viterbi(params, pat);
    for (int t = 0; t < pat.T(); ++t) {
      const int g = states[t];
      out << pat.id << "," << (t + 1) << "," << (sp.state_a_of(g) + 1) << ","
          << (sp.state_b_of(g) + 1) << "," << (g + 1) << "\n";
    }
  }
}

PpcResult posterior_predictive(const std::vector<Parameters>& draws,
                               const PanelDataset& data, int n_rep,
                               std::uint64_t seed) {
  if (draws.empty()) throw ValidationError("no posterior draws for replication");
  if (n_rep < 2) throw ValidationError("need at least 2 replicates");
  const int D = static_cast<int>(draws.size());

  // Replicate stream is independent of the sampler's chain streams.
  Rng rng(seed, 0x9e3779b9U);

  // replicate values per (patient, t, channel), sized T_total x n_rep
  int total_t = data.total_rows();
  Eigen::MatrixXd rep_a(total_t, n_rep), rep_b(total_t, n_rep);
  for (int r = 0; r < n_rep; ++r) {
    const Parameters& par = draws[rng.uniform_int(0, D - 1)];
    const StateSpace& sp = par.space;
    int row = 0;
    for (const auto& pat : data.patients) {
      const std::vector<int> states = viterbi(par, pat);
      for (int t = 0; t < pat.T(); ++t) {
        const int g = states[t];
        rep_a(row, r) = rng.normal(par.mu_a[g / sp.n_b], par.sigma_a);
        rep_b(row, r) = rng.normal(par.mu_b[g % sp.n_b], par.sigma_b);
        ++row;
      }
    }
  }

  PpcResult res;
  res.rows.reserve(2 * total_t);
  int in50 = 0, in90 = 0;
  int row = 0;
  for (const auto& pat : data.patients) {
    for (int t = 0; t < pat.T(); ++t) {
      for (int ch = 0; ch < 2; ++ch) {
        const Eigen::VectorXd reps =
            (ch == 0) ? rep_a.row(row).transpose() : rep_b.row(row).transpose();
        PpcResult::Row r;
        r.patient_id = pat.id;
        r.t = t + 1;
        r.channel = (ch == 0) ? 'a' : 'b';
        r.observed = (ch == 0) ? pat.y_a[t] : pat.y_b[t];
        r.q5 = quantile(reps, 0.05);
        r.q25 = quantile(reps, 0.25);
        r.q50 = quantile(reps, 0.50);
        r.q75 = quantile(reps, 0.75);
        r.q95 = quantile(reps, 0.95);
        if (r.observed >= r.q25 && r.observed <= r.q75) ++in50;
        if (r.observed >= r.q5 && r.observed <= r.q95) ++in90;
        res.rows.push_back(std::move(r));
      }
      ++row;
    }
  }
  res.n_observations = 2 * total_t;
  res.coverage50 = double(in50) / res.n_observations;
  res.coverage90 = double(in90) / res.n_observations;
  return res;
}

void write_ppc_csv(const PpcResult& ppc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write ppc file: " + path);
  out << "patient_id,t,channel,observed,q5,q25,q50,q75,q95\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : ppc.rows)
    out << r.patient_id << "," << r.t << "," << r.channel << ","
        << fmt(r.observed) << "," << fmt(r.q5) << "," << fmt(r.q25) << ","
        << fmt(r.q50) << "," << fmt(r.q75) << "," << fmt(r.q95) << "\n";
}

std::vector<TransitionSummary> conditional_transition_summary(
    const std::vector<Parameters>& draws, const Eigen::VectorXd& profile,
    const std::vector<std::pair<int, int>>& pairs) {
  if (draws.empty()) throw ValidationError("no draws to summarize");
  const int G = draws.front().space.n_global();
  std::vector<std::pair<int, int>> wanted = pairs;
  if (wanted.empty())
    for (int j = 0; j < G; ++j)
      for (int k = 0; k < G; ++k) wanted.emplace_back(j, k);
  for (const auto& [j, k] : wanted)
    if (j < 0 || j >= G || k < 0 || k >= G)
      throw ValidationError("transition pair (" + std::to_string(j + 1) + "," +
                            std::to_string(k + 1) + ") outside the state space");

  const int D = static_cast<int>(draws.size());
  Eigen::MatrixXd gamma_draws(D, static_cast<int>(wanted.size()));
  for (int d = 0; d < D; ++d) {
    const Eigen::MatrixXd gamma = transition_matrix(draws[d], profile);
    for (std::size_t w = 0; w < wanted.size(); ++w)
      gamma_draws(d, static_cast<int>(w)) =
          gamma(wanted[w].first, wanted[w].second);
  }
  std::vector<TransitionSummary> out;
  out.reserve(wanted.size());
  for (std::size_t w = 0; w < wanted.size(); ++w) {
    const Eigen::VectorXd col = gamma_draws.col(static_cast<int>(w));
    TransitionSummary ts;
    ts.from = wanted[w].first;
    ts.to = wanted[w].second;
    ts.mean = col.mean();
    ts.q5 = quantile(col, 0.05);
    ts.q25 = quantile(col, 0.25);
    ts.q50 = quantile(col, 0.50);
    ts.q75 = quantile(col, 0.75);
    ts.q95 = quantile(col, 0.95);
    out.push_back(ts);
  }
  return out;
}

void write_transition_summary_csv(const std::vector<TransitionSummary>& rows,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write transition summary: " + path);
  out << "from,to,mean,q5,q25,q50,q75,q95\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows)
    out << (r.from + 1) << "," << (r.to + 1) << "," << fmt(r.mean) << ","
        << fmt(r.q5) << "," << fmt(r.q25) << "," << fmt(r.q50) << ","
        << fmt(r.q75) << "," << fmt(r.q95) << "\n";
}

SpilloverReport spillover(const std::vector<Parameters>& draws,
                          const SpilloverSpec& spec) {
  if (draws.empty()) throw ValidationError("no draws for spill-over");
  const Parameters& first = draws.front();
  const int G = first.space.n_global();
  const int p = first.n_covariates();
  if (spec.profile.size() != p)
    throw ValidationError("spill-over profile has dimension " +
                          std::to_string(spec.profile.size()) +
                          ", model expects " + std::to_string(p));
  if (spec.treatment_index < 0 || spec.treatment_index >= p)
    throw ValidationError("treatment covariate index outside the profile");
  if (spec.treatment_lag_index >= p)
    throw ValidationError("treatment lag covariate index outside the profile");
  for (int g : spec.path)
    if (g < 0 || g >= G)
      throw ValidationError("spill-over path state outside the state space");

  // First transition: treatment acts through the contemporaneous column.
  // Second transition: the treatment given one step earlier acts through
  // the lag-1 column (when the model has one).
  auto step_profiles = [&](double z) {
    Eigen::VectorXd x1 = spec.profile;
    x1[spec.treatment_index] = z;
    Eigen::VectorXd x2 = spec.profile;
    if (spec.treatment_lag_index >= 0) x2[spec.treatment_lag_index] = z;
    return std::make_pair(x1, x2);
  };
  const auto [x1_z, x2_z] = step_profiles(spec.treated_value);
  const auto [x1_u, x2_u] = step_profiles(spec.untreated_value);

  const int D = static_cast<int>(draws.size());
  Eigen::VectorXd xi_z(D), xi_u(D), diff(D);
  std::vector<double> quot_all, quot_finite;
  quot_all.reserve(D);
  quot_finite.reserve(D);
  int overflow = 0;
  for (int d = 0; d < D; ++d) {
    const Parameters& par = draws[d];
    const double z1 =
        transition_matrix(par, x1_z)(spec.path[0], spec.path[1]);
    const double z2 =
        transition_matrix(par, x2_z)(spec.path[1], spec.path[2]);
    const double u1 =
        transition_matrix(par, x1_u)(spec.path[0], spec.path[1]);
    const double u2 =
        transition_matrix(par, x2_u)(spec.path[1], spec.path[2]);
    xi_z[d] = z1 * z2;
    xi_u[d] = u1 * u2;
    diff[d] = xi_z[d] - xi_u[d];
    if (xi_u[d] < 1e-300) {
      // flagged overflow sentinel
      ++overflow;
      quot_all.push_back(std::numeric_limits<double>::infinity());
    } else {
      const double q = xi_z[d] / xi_u[d];
      quot_all.push_back(q);
      quot_finite.push_back(q);
    }
  }

  SpilloverReport rep;
  rep.path = spec.path;
  rep.profile = spec.profile;
  rep.n_draws = D;
  rep.n_quotient_overflow = overflow;
  rep.overflow_warning = double(overflow) > 0.01 * D;
  // A handful of sentinel draws sit harmlessly past the 95% point; only a
  // widespread overflow excludes them from interpolation, with a warning.
  const std::vector<double>& quot =
      rep.overflow_warning ? quot_finite : quot_all;
  const double probs[5] = {0.05, 0.25, 0.50, 0.75, 0.95};
  for (int c = 0; c < 5; ++c) {
    rep.quantiles(0, c) = quantile(xi_z, probs[c]);
    rep.quantiles(1, c) = quantile(xi_u, probs[c]);
    rep.quantiles(2, c) = quantile(diff, probs[c]);
    rep.quantiles(3, c) = quantile(quot, probs[c]);
  }
  return rep;
}

void write_spillover_csv(const SpilloverReport& report,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write spill-over file: " + path);
  out << "row,q5,q25,q50,q75,q95\n";
  const char* names[4] = {"xi_z", "xi_zprime", "difference", "quotient"};
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (int r = 0; r < 4; ++r) {
    out << names[r];
    for (int c = 0; c < 5; ++c) out << "," << fmt(report.quantiles(r, c));
    out << "\n";
  }
  if (report.overflow_warning)
    out << "# warning: xi_zprime at machine zero in "
        << report.n_quotient_overflow << "/" << report.n_draws << " draws\n";
}

}  // namespace chmm
