#include "chmm/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "chmm/errors.hpp"
#include "chmm/stats.hpp"

namespace chmm {

namespace {

constexpr double nan_v = std::numeric_limits<double>::quiet_NaN();

// Within/between variance decomposition shared by rhat and ess.
struct ChainMoments {
  double w = 0.0;         // mean within-chain variance
  double var_plus = 0.0;  // pooled posterior variance estimate
  bool defined = false;
};

ChainMoments moments(const std::vector<Eigen::VectorXd>& chains) {
  ChainMoments mom;
  const int m = static_cast<int>(chains.size());
  if (m < 1) return mom;
  const int n = static_cast<int>(chains[0].size());
  if (n < 2) return mom;
  Eigen::VectorXd means(m), vars(m);
  for (int c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    vars[c] = sample_variance(chains[c]);
  }
  mom.w = vars.mean();
  const double b_over_n = (m > 1) ? sample_variance(means) : 0.0;
  mom.var_plus = (double(n - 1) / n) * mom.w + b_over_n;
  mom.defined = mom.w > 0.0;
  return mom;
}

}  // namespace

double compute_rhat(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) return nan_v;
  const int n = static_cast<int>(chains[0].size());
  if (n < 4) return nan_v;
  // Split each chain in half so within-chain drift shows up as
  // between-chain disagreement.
  const int half = n / 2;
  std::vector<Eigen::VectorXd> split;
  split.reserve(chains.size() * 2);
  for (const auto& c : chains) {
    if (c.size() != n) throw ValidationError("chains have unequal lengths");
    split.push_back(c.head(half));
    split.push_back(c.tail(half));
  }
  ChainMoments mom = moments(split);
  if (!mom.defined) return nan_v;
  return std::sqrt(mom.var_plus / mom.w);
}

double compute_ess(const std::vector<Eigen::VectorXd>& chains) {
  const int m = static_cast<int>(chains.size());
  if (m < 1) return nan_v;
  const int n = static_cast<int>(chains[0].size());
  if (n < 8) return nan_v;
  ChainMoments mom = moments(chains);
  if (!mom.defined) return nan_v;

  // Chain-averaged autocovariance at one lag (biased 1/n normalization),
  // computed on demand: well-mixed chains only need the first few lags.
  std::vector<Eigen::VectorXd> centered;
  centered.reserve(m);
  for (const auto& chain : chains) {
    if (chain.size() != n) throw ValidationError("chains have unequal lengths");
    centered.push_back(chain.array() - chain.mean());
  }
  auto acov = [&](int lag) {
    double total = 0.0;
    for (const auto& c : centered)
      total += c.head(n - lag).dot(c.tail(n - lag)) / n;
    return total / double(m);
  };

  // Paired (even, odd) autocorrelation sums; stop at the first
  // non-positive pair, then enforce monotone decrease.
  const int max_lag = n - 4;
  std::vector<double> rho;
  rho.push_back(1.0);
  rho.push_back(1.0 - (mom.w - acov(1)) / mom.var_plus);
  int s = 1;
  while (s + 2 <= max_lag) {
    const double even = 1.0 - (mom.w - acov(s + 1)) / mom.var_plus;
    const double odd = 1.0 - (mom.w - acov(s + 2)) / mom.var_plus;
    if (even + odd <= 0.0) break;
    rho.push_back(even);
    rho.push_back(odd);
    s += 2;
  }
  for (std::size_t k = 2; k + 1 < rho.size(); k += 2) {
    const double prev = rho[k - 2] + rho[k - 1];
    if (rho[k] + rho[k + 1] > prev) {
      rho[k] = prev / 2.0;
      rho[k + 1] = prev / 2.0;
    }
  }
  double tau = 0.0;
  for (std::size_t k = 0; k + 1 < rho.size(); k += 2)
    tau += rho[k] + rho[k + 1];
  tau = -1.0 + 2.0 * tau;
  if (tau < 1e-12) return nan_v;
  return double(m) * double(n) / tau;
}

bool DiagnosticsReport::converged(double threshold) const {
  if (rhat.size() == 0) return false;
  for (int i = 0; i < rhat.size(); ++i) {
    if (std::isnan(rhat[i])) {
      // A flat parameter column gives an undefined rhat; a truly constant
      // posterior dimension cannot block convergence, but disagreement
      // between chains on a flat-within dimension must.
      if (sd[i] > 1e-12) return false;
      continue;
    }
    if (rhat[i] >= threshold) return false;
  }
  return true;
}

DiagnosticsReport diagnose(const std::vector<Eigen::MatrixXd>& chains,
                           const std::vector<std::string>& names,
                           int divergences) {
  if (chains.empty()) throw ValidationError("no chains to diagnose");
  const int dim = static_cast<int>(chains[0].cols());
  if (static_cast<int>(names.size()) != dim)
    throw ValidationError("diagnostics name count does not match columns");
  DiagnosticsReport rep;
  rep.names = names;
  rep.divergences = divergences;
  rep.n_chains = static_cast<int>(chains.size());
  rep.n_iter = static_cast<int>(chains[0].rows());
  rep.rhat.resize(dim);
  rep.ess.resize(dim);
  rep.mean.resize(dim);
  rep.sd.resize(dim);
  rep.q5.resize(dim);
  rep.q25.resize(dim);
  rep.q50.resize(dim);
  rep.q75.resize(dim);
  rep.q95.resize(dim);

  const int total = rep.n_chains * rep.n_iter;
  Eigen::VectorXd pooled(total);
  std::vector<Eigen::VectorXd> cols(rep.n_chains);
  for (int j = 0; j < dim; ++j) {
    for (int c = 0; c < rep.n_chains; ++c) {
      cols[c] = chains[c].col(j);
      pooled.segment(c * rep.n_iter, rep.n_iter) = cols[c];
    }
    rep.rhat[j] = compute_rhat(cols);
    rep.ess[j] = compute_ess(cols);
    rep.mean[j] = pooled.mean();
    rep.sd[j] = std::sqrt(sample_variance(pooled));
    rep.q5[j] = quantile(pooled, 0.05);
    rep.q25[j] = quantile(pooled, 0.25);
    rep.q50[j] = quantile(pooled, 0.50);
    rep.q75[j] = quantile(pooled, 0.75);
    rep.q95[j] = quantile(pooled, 0.95);
  }
  return rep;
}

void write_diagnostics_csv(const DiagnosticsReport& report,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write diagnostics file: " + path);
  out << "parameter,mean,sd,q5,q25,q50,q75,q95,rhat,ess\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t j = 0; j < report.names.size(); ++j) {
    const int i = static_cast<int>(j);
    out << report.names[j] << "," << fmt(report.mean[i]) << ","
        << fmt(report.sd[i]) << "," << fmt(report.q5[i]) << ","
        << fmt(report.q25[i]) << "," << fmt(report.q50[i]) << ","
        << fmt(report.q75[i]) << "," << fmt(report.q95[i]) << ","
        << fmt(report.rhat[i]) << "," << fmt(report.ess[i]) << "\n";
  }
}

}  // namespace chmm
