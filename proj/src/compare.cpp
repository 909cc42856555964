#include "chmm/compare.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "chmm/errors.hpp"
#include "chmm/likelihood.hpp"
#include "chmm/stats.hpp"

namespace chmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void check_pointwise(const Eigen::MatrixXd& pw) {
  if (pw.rows() < 1 || pw.cols() < 1)
    throw ValidationError("pointwise log-likelihood matrix is empty");
  if (!pw.allFinite())
    throw ValidationError(
        "pointwise log-likelihood matrix has non-finite entries");
}

}  // namespace

WaicResult waic(const Eigen::MatrixXd& pw) {
  check_pointwise(pw);
  const int n = static_cast<int>(pw.cols());
  WaicResult res;
  res.lpd_i.resize(n);
  res.p_i.resize(n);
  res.elpd_i.resize(n);
  for (int i = 0; i < n; ++i) {
    res.lpd_i[i] = log_mean_exp(pw.col(i));
    res.p_i[i] = sample_variance(pw.col(i));
    res.elpd_i[i] = res.lpd_i[i] - res.p_i[i];
  }
  res.elpd_waic = res.elpd_i.sum();
  res.p_waic = res.p_i.sum();
  res.waic_deviance = -2.0 * res.elpd_waic;
  res.se = std::sqrt(n * sample_variance(res.elpd_i));
  return res;
}

GpdFit gpd_fit(std::vector<double> x) {
  GpdFit fit;
  fit.k = kInf;
  fit.sigma = kInf;
  const int n = static_cast<int>(x.size());
  if (n < 5) return fit;  // too few exceedances to say anything
  std::sort(x.begin(), x.end());
  if (!(x.front() > 0.0) || !std::isfinite(x.back())) return fit;

  const int m = 30 + static_cast<int>(std::floor(std::sqrt(double(n))));
  const double x_star = x[static_cast<int>(std::floor(n / 4.0 + 0.5)) - 1];
  const double x_max = x[n - 1];

  // Grid of candidate inverse-scale values; profile log-likelihood weights.
  Eigen::VectorXd theta(m), logl(m);
  for (int j = 0; j < m; ++j) {
    theta[j] =
        1.0 / x_max + (1.0 - std::sqrt(double(m) / (j + 0.5))) / (3.0 * x_star);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::log1p(-theta[j] * x[i]);
    const double kj = -acc / n;  // shares the sign of theta[j]
    logl[j] = n * (std::log(theta[j] / kj) + kj - 1.0);
  }
  const double lse = log_sum_exp_vec(logl);
  double theta_hat = 0.0;
  for (int j = 0; j < m; ++j) theta_hat += std::exp(logl[j] - lse) * theta[j];

  double k_hat = 0.0;
  for (int i = 0; i < n; ++i) k_hat += std::log1p(-theta_hat * x[i]);
  k_hat /= n;  // heavy-tail-positive convention
  fit.sigma = -k_hat / theta_hat;
  // Weak prior pull toward k = 0.5 stabilizes small tails.
  fit.k = (n * k_hat + 5.0) / (n + 10.0);
  if (std::isnan(fit.k) || std::isnan(fit.sigma)) {
    fit.k = kInf;
    fit.sigma = kInf;
  }
  return fit;
}

double gpd_quantile(double p, double k, double sigma) {
  if (!(p >= 0.0 && p < 1.0))
    throw ValidationError("generalized Pareto quantile needs p in [0,1)");
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma / k * std::expm1(-k * std::log1p(-p));
}

namespace {

// Pareto-smoothed normalized log weights for one patient column; returns
// the tail-shape diagnostic and overwrites lw in place.
double smooth_column(Eigen::VectorXd& lw) {
  const int s = static_cast<int>(lw.size());
  lw.array() -= lw.maxCoeff();

  double khat = kInf;
  const int tail_len = static_cast<int>(
      std::ceil(std::min(0.2 * s, 3.0 * std::sqrt(double(s)))));
  if (tail_len >= 5 && tail_len < s) {
    std::vector<int> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&lw](int a, int b) { return lw[a] < lw[b]; });
    const double cutoff = lw[order[s - tail_len - 1]];
    const double tail_lo = lw[order[s - tail_len]];
    const double tail_hi = lw[order[s - 1]];
    if (tail_hi - tail_lo > 1e-30) {
      std::vector<double> exceed(tail_len);
      const double exp_cut = std::exp(cutoff);
      for (int j = 0; j < tail_len; ++j)
        exceed[j] = std::exp(lw[order[s - tail_len + j]]) - exp_cut;
      const GpdFit fit = gpd_fit(exceed);
      khat = fit.k;
      if (std::isfinite(fit.k)) {
        for (int j = 0; j < tail_len; ++j) {
          const double p = (j + 0.5) / tail_len;
          lw[order[s - tail_len + j]] =
              std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cut);
        }
      }
    }
  }
  // Truncate at the raw maximum (zero after the shift above).
  for (int d = 0; d < s; ++d) lw[d] = std::min(lw[d], 0.0);
  return khat;
}

}  // namespace

LooResult psis_loo(const Eigen::MatrixXd& pw) {
  check_pointwise(pw);
  const int s = static_cast<int>(pw.rows());
  const int n = static_cast<int>(pw.cols());
  LooResult res;
  res.small_sample = s < 100;
  res.elpd_i.resize(n);
  res.pareto_k.resize(n);
  Eigen::VectorXd lpd(n);
  for (int i = 0; i < n; ++i) {
    lpd[i] = log_mean_exp(pw.col(i));
    const double spread = pw.col(i).maxCoeff() - pw.col(i).minCoeff();
    if (spread <= 0.0) {
      // No importance variation; leave-one-out equals the plain density.
      res.elpd_i[i] = pw(0, i);
      res.pareto_k[i] = -kInf;
      continue;
    }
    Eigen::VectorXd lw = -pw.col(i);
    res.pareto_k[i] = smooth_column(lw);
    res.elpd_i[i] =
        log_sum_exp_vec(lw + pw.col(i)) - log_sum_exp_vec(lw);
  }
  res.elpd_loo = res.elpd_i.sum();
  res.p_loo = (lpd - res.elpd_i).sum();
  res.se = std::sqrt(n * sample_variance(res.elpd_i));
  res.k_counts = {{0, 0, 0, 0}};
  for (int i = 0; i < n; ++i) {
    const double k = res.pareto_k[i];
    if (k <= 0.5)
      ++res.k_counts[0];
    else if (k <= 0.7)
      ++res.k_counts[1];
    else if (k <= 1.0)
      ++res.k_counts[2];
    else
      ++res.k_counts[3];
  }
  return res;
}

ElpdDiff elpd_loo_difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() == 0 || a.size() != b.size())
    throw ValidationError(
        "paired elpd comparison needs per-patient vectors of equal, "
        "non-zero length");
  if (!a.allFinite() || !b.allFinite())
    throw ValidationError("paired elpd comparison has non-finite entries");
  ElpdDiff d;
  const Eigen::VectorXd delta = a - b;
  d.diff = delta.sum();
  const auto n = static_cast<double>(delta.size());
  d.se = delta.size() < 2 ? 0.0 : std::sqrt(n * sample_variance(delta));
  return d;
}

CompareReport fit_variants(const PanelDataset& raw_panel,
                           const ModelSpec& base_model,
                           const ChainConfig& chains,
                           const std::vector<VariantSpec>& variants,
                           const ProgressFn& progress) {
  std::vector<VariantSpec> plan = variants;
  if (plan.empty()) {
    plan.push_back({"coupled " + std::to_string(base_model.n_a) + "x" +
                        std::to_string(base_model.n_b),
                    base_model.n_a, base_model.n_b});
    plan.push_back({"single-state A", 1, base_model.n_b});
    plan.push_back({"single-state B", base_model.n_a, 1});
  }
  for (const auto& v : plan) {
    if (v.n_a < 1 || v.n_b < 1)
      throw ValidationError("variant '" + v.label +
                            "' has non-positive state counts");
    if (v.n_a * v.n_b < 2)
      throw ValidationError(
          "variant '" + v.label +
          "' has a single global state: no latent dynamics to compare");
  }

  CompareReport report;
  for (const auto& v : plan) {
    VariantResult row;
    row.label = v.label;
    row.n_a = v.n_a;
    row.n_b = v.n_b;
    row.interactions = v.n_a > 1 && v.n_b > 1;
    try {
      ModelSpec model = base_model;
      model.n_a = v.n_a;
      model.n_b = v.n_b;
      FitResult fit = run_fit(raw_panel, model, chains, progress);
      const Eigen::MatrixXd pw =
          pointwise_loglik(fit.draw_params, fit.model_data);
      const WaicResult w = waic(pw);
      const LooResult loo = psis_loo(pw);
      row.converged = fit.diagnostics.converged();
      row.n_patients = fit.model_data.n_patients();
      row.elpd_loo = loo.elpd_loo;
      row.se_elpd = loo.se;
      row.p_loo = loo.p_loo;
      row.k_counts = loo.k_counts;
      row.elpd_i = loo.elpd_i;
      row.elpd_waic = w.elpd_waic;
      row.p_waic = w.p_waic;
      row.waic_deviance = w.waic_deviance;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_compare_csv(const CompareReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write comparison file: " + path);
  out << "model,states_a,states_b,interactions,converged,elpd_loo,se_elpd,"
         "p_loo,elpd_waic,p_waic,waic_deviance,pareto_k_le_0.5,"
         "pareto_k_0.5_0.7,pareto_k_0.7_1.0,pareto_k_gt_1.0,error\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : report.rows) {
    out << csv_field(r.label) << "," << r.n_a << "," << r.n_b << ","
        << (r.interactions ? "yes" : "no") << ","
        << (r.converged ? "yes" : "no");
    const bool ok = !r.failed;
    out << "," << fmt_full(ok ? r.elpd_loo : nan)
        << "," << fmt_full(ok ? r.se_elpd : nan)
        << "," << fmt_full(ok ? r.p_loo : nan)
        << "," << fmt_full(ok ? r.elpd_waic : nan)
        << "," << fmt_full(ok ? r.p_waic : nan)
        << "," << fmt_full(ok ? r.waic_deviance : nan);
    for (int b = 0; b < 4; ++b) out << "," << (ok ? r.k_counts[b] : 0);
    out << "," << csv_field(r.error) << "\n";
  }
}

std::string render_compare_table(const CompareReport& report) {
  auto num = [](double v, bool paren) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), paren ? "(%.2f)" : "%.2f", v);
    return std::string(buf);
  };
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({{"model", "interactions", "states", "elpd", "SE(elpd)",
                    "WAIC"}});
  bool any_dagger = false;
  bool any_failed = false;
  for (const auto& r : report.rows) {
    std::array<std::string, 6> row;
    row[0] = r.label;
    if (!r.failed && !r.converged) {
      row[0] += " †";
      any_dagger = true;
    }
    row[1] = r.interactions ? "yes" : "no";
    row[2] = std::to_string(r.n_a) + "x" + std::to_string(r.n_b);
    if (r.failed) {
      row[3] = row[4] = row[5] = "--";
      any_failed = true;
    } else {
      const bool paren = !r.converged;
      row[3] = num(r.elpd_loo, paren);
      row[4] = num(r.se_elpd, paren);
      row[5] = num(r.waic_deviance, paren);
    }
    cells.push_back(std::move(row));
  }
  // Display width in code points, not bytes (the dagger is multi-byte).
  auto disp = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s)
      if ((c & 0xC0) != 0x80) ++n;
    return n;
  };
  std::array<std::size_t, 6> width{};
  for (const auto& row : cells)
    for (int c = 0; c < 6; ++c) width[c] = std::max(width[c], disp(row[c]));
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (int c = 0; c < 6; ++c) {
      out << cells[r][c]
          << std::string(width[c] - disp(cells[r][c]) + 2, ' ');
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (int c = 0; c < 6; ++c) total += width[c] + 2;
      out << std::string(total, '-') << "\n";
    }
  }
  out << "elpd: leave-one-out expected log pointwise predictive density "
         "(higher is better).\n";
  out << "WAIC: widely-applicable information criterion on the deviance "
         "scale (lower is better).\n";
  // Paired per-patient gaps against the first row; shared per-patient
  // difficulty cancels in these standard errors.
  if (report.rows.size() >= 2 && report.rows[0].elpd_i.size() > 0) {
    const auto& base = report.rows[0];
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
      const auto& r = report.rows[i];
      if (r.elpd_i.size() != base.elpd_i.size()) continue;
      const ElpdDiff d = elpd_loo_difference(base.elpd_i, r.elpd_i);
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "elpd gap %s vs %s: %+.2f (se %.2f)\n",
                    base.label.c_str(), r.label.c_str(), d.diff, d.se);
      out << buf;
    }
  }
  if (any_dagger)
    out << "† chains did not converge (split R-hat >= 1.1); "
           "parenthesized metrics are unreliable.\n";
  if (any_failed) {
    for (const auto& r : report.rows)
      if (r.failed) out << "-- " << r.label << " failed: " << r.error << "\n";
  }
  return out.str();
}

}  // namespace chmm
