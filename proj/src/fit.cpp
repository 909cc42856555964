#include "chmm/fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chmm/errors.hpp"
#include "chmm/rng.hpp"
#include "chmm/stats.hpp"
#include "json.hpp"

namespace chmm {

namespace {

std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::string> constrained_parameter_names(
    const StateSpace& space, const std::vector<std::string>& covariate_names) {
  const int G = space.n_global();
  std::vector<std::string> names;
  for (int i = 0; i < space.n_a; ++i)
    names.push_back("mu_a." + std::to_string(i + 1));
  for (int i = 0; i < space.n_b; ++i)
    names.push_back("mu_b." + std::to_string(i + 1));
  names.push_back("sigma_a");
  names.push_back("sigma_b");
  for (int g = 0; g < G; ++g) names.push_back("pi." + std::to_string(g + 1));
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        names.push_back("alpha." + std::to_string(j + 1) + "." +
                        std::to_string(k + 1));
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (const auto& cov : covariate_names)
          names.push_back("beta." + std::to_string(j + 1) + "." +
                          std::to_string(k + 1) + "." + cov);
  return names;
}

namespace {

Eigen::VectorXd constrained_row(const Parameters& par) {
  const int G = par.space.n_global();
  const int p = par.n_covariates();
  const int n = par.space.n_a + par.space.n_b + 2 + G + G * (G - 1) * (1 + p);
  Eigen::VectorXd row(n);
  int pos = 0;
  for (int i = 0; i < par.space.n_a; ++i) row[pos++] = par.mu_a[i];
  for (int i = 0; i < par.space.n_b; ++i) row[pos++] = par.mu_b[i];
  row[pos++] = par.sigma_a;
  row[pos++] = par.sigma_b;
  for (int g = 0; g < G; ++g) row[pos++] = par.pi[g];
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) row[pos++] = par.alpha(j, k);
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < p; ++c) row[pos++] = par.beta(j * G + k, c);
  return row;
}

Parameters params_from_row(const Eigen::Ref<const Eigen::VectorXd>& row,
                           const StateSpace& space, int p) {
  const int G = space.n_global();
  Parameters par = make_empty_parameters(space, p);
  int pos = 0;
  for (int i = 0; i < space.n_a; ++i) par.mu_a[i] = row[pos++];
  for (int i = 0; i < space.n_b; ++i) par.mu_b[i] = row[pos++];
  par.sigma_a = row[pos++];
  par.sigma_b = row[pos++];
  for (int g = 0; g < G; ++g) par.pi[g] = row[pos++];
  par.pi /= par.pi.sum();  // absorb round-trip rounding
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k) par.alpha(j, k) = row[pos++];
  for (int j = 0; j < G; ++j)
    for (int k = 0; k < G; ++k)
      if (j != k)
        for (int c = 0; c < p; ++c) par.beta(j * G + k, c) = row[pos++];
  return par;
}

Parameters mean_params(const std::vector<Parameters>& draws) {
  if (draws.empty()) throw ValidationError("no draws to average");
  Eigen::VectorXd acc = constrained_row(draws.front());
  for (std::size_t d = 1; d < draws.size(); ++d)
    acc += constrained_row(draws[d]);
  acc /= double(draws.size());
  Parameters par = params_from_row(acc, draws.front().space,
                                   draws.front().n_covariates());
  par.validate();
  return par;
}

}  // namespace

Eigen::MatrixXd FitResult::constrained_stacked() const {
  if (constrained_chains.empty()) return {};
  const int n = static_cast<int>(constrained_chains[0].rows());
  Eigen::MatrixXd out(n * static_cast<int>(constrained_chains.size()),
                      constrained_chains[0].cols());
  for (std::size_t c = 0; c < constrained_chains.size(); ++c)
    out.middleRows(static_cast<int>(c) * n, n) = constrained_chains[c];
  return out;
}

Parameters FitResult::posterior_mean_params() const {
  return mean_params(draw_params);
}

Parameters LoadedFit::posterior_mean_params() const {
  return mean_params(draw_params);
}

std::vector<Eigen::VectorXd> initialize_chains(const PanelDataset& data,
                                               const UnconstrainedLayout& layout,
                                               const LogPosterior& target,
                                               const ChainConfig& config) {
  const StateSpace& sp = layout.space;
  const int G = sp.n_global();

  std::vector<double> ya, yb;
  for (const auto& pat : data.patients) {
    ya.insert(ya.end(), pat.y_a.data(), pat.y_a.data() + pat.T());
    yb.insert(yb.end(), pat.y_b.data(), pat.y_b.data() + pat.T());
  }
  std::sort(ya.begin(), ya.end());
  std::sort(yb.begin(), yb.end());

  // Quantile-bin split of the pooled observations: bin means seed the
  // emission means, pooled within-bin spread seeds the SD.
  auto split = [](const std::vector<double>& y, int bins) {
    Eigen::VectorXd mu(bins);
    double ss = 0.0;
    int n_ss = 0;
    const int n = static_cast<int>(y.size());
    for (int b = 0; b < bins; ++b) {
      const int lo = (n * b) / bins;
      const int hi = std::max(lo + 1, (n * (b + 1)) / bins);
      double m = 0.0;
      for (int i = lo; i < hi; ++i) m += y[i];
      m /= (hi - lo);
      mu[b] = m;
      for (int i = lo; i < hi; ++i) {
        ss += (y[i] - m) * (y[i] - m);
        ++n_ss;
      }
    }
    // Degenerate splits (all-equal data) get a fixed perturbation.
    for (int b = 1; b < bins; ++b)
      if (mu[b] <= mu[b - 1]) mu[b] = mu[b - 1] + 0.01;
    double sd = n_ss > 1 ? std::sqrt(ss / (n_ss - 1)) : 0.01;
    if (sd < 1e-3) sd = 1e-3;
    return std::make_pair(mu, sd);
  };
  const auto [mu_a0, sd_a0] = split(ya, sp.n_a);
  const auto [mu_b0, sd_b0] = split(yb, sp.n_b);

  std::vector<Eigen::VectorXd> inits;
  inits.reserve(config.n_chains);
  for (int c = 0; c < config.n_chains; ++c) {
    Rng rng(config.seed, 1000 + static_cast<std::uint64_t>(c));
    Eigen::VectorXd theta;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Parameters par = make_empty_parameters(sp, layout.p);
      par.mu_a = mu_a0;
      par.mu_b = mu_b0;
      par.sigma_a = sd_a0;
      par.sigma_b = sd_b0;
      par.pi = Eigen::VectorXd::Constant(G, 1.0 / G);
      for (int j = 0; j < G; ++j)
        for (int k = 0; k < G; ++k)
          if (j != k) {
            par.alpha(j, k) = rng.uniform(-2.0, 2.0);
            for (int q = 0; q < layout.p; ++q)
              par.beta(j * G + k, q) = rng.uniform(-2.0, 2.0);
          }
      theta = unconstrain(par);
      ok = std::isfinite(target.value(theta));
    }
    if (!ok)
      throw NumericError(
          "chain " + std::to_string(c + 1) +
          ": no finite initial point found in 100 attempts");
    inits.push_back(std::move(theta));
  }
  return inits;
}

FitResult run_fit(const PanelDataset& raw_panel, const ModelSpec& model,
                  const ChainConfig& chains, const ProgressFn& progress) {
  chains.validate();
  FitResult fit;
  fit.space = StateSpace(model.n_a, model.n_b);
  fit.model_data = apply_derivations(raw_panel, model.covariates);
  fit.model_data.validate();
  const int p = fit.model_data.n_covariates();
  fit.layout = UnconstrainedLayout(fit.space, p);

  PanelDataset sampler_data = fit.model_data;
  if (p > 0) {
    fit.qr = compute_qr(fit.model_data);
    sampler_data = apply_qr(fit.model_data, fit.qr);
  }

  LogPosterior target(sampler_data, fit.layout);
  const std::vector<Eigen::VectorXd> inits =
      initialize_chains(sampler_data, fit.layout, target, chains);
  TargetFn fn = [&target](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    return target.value_grad(q, g);
  };
  fit.draws = nuts_sample(fn, fit.layout.dim(), chains, inits, progress);

  fit.constrained_names =
      constrained_parameter_names(fit.space, fit.model_data.covariate_names);
  const int n_con = static_cast<int>(fit.constrained_names.size());
  fit.constrained_chains.resize(chains.n_chains);
  fit.draw_params.reserve(chains.n_chains * chains.n_sampling);
  for (int c = 0; c < chains.n_chains; ++c) {
    fit.constrained_chains[c].resize(chains.n_sampling, n_con);
    for (int i = 0; i < chains.n_sampling; ++i) {
      ConstrainResult cr = constrain(fit.draws.chains[c].row(i), fit.layout);
      if (p > 0) cr.params.beta = beta_from_tilde(cr.params.beta, fit.qr);
      fit.constrained_chains[c].row(i) = constrained_row(cr.params);
      fit.draw_params.push_back(std::move(cr.params));
    }
  }
  fit.diagnostics = diagnose(fit.constrained_chains, fit.constrained_names,
                             fit.draws.total_divergences());
  return fit;
}

void write_draws_csv(const FitResult& fit, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write draws file: " + path);
  out << "chain,iter";
  for (const auto& n : fit.constrained_names) out << "," << n;
  out << "\n";
  for (std::size_t c = 0; c < fit.constrained_chains.size(); ++c) {
    const auto& block = fit.constrained_chains[c];
    for (int i = 0; i < block.rows(); ++i) {
      out << (c + 1) << "," << (i + 1);
      for (int j = 0; j < block.cols(); ++j)
        out << "," << fmt_full(block(i, j));
      out << "\n";
    }
  }
}

void write_traceplot_csvs(const FitResult& fit, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t j = 0; j < fit.constrained_names.size(); ++j) {
    const fs::path file = fs::path(dir) / (fit.constrained_names[j] + ".csv");
    std::ofstream out(file);
    if (!out) throw LoadError("cannot write traceplot file: " + file.string());
    out << "iter";
    for (std::size_t c = 0; c < fit.constrained_chains.size(); ++c)
      out << ",chain_" << (c + 1);
    out << "\n";
    const int n = static_cast<int>(fit.constrained_chains[0].rows());
    for (int i = 0; i < n; ++i) {
      out << (i + 1);
      for (const auto& block : fit.constrained_chains)
        out << "," << fmt_full(block(i, static_cast<int>(j)));
      out << "\n";
    }
  }
}

void write_manifest_json(const FitResult& fit, const ChainConfig& config,
                         const std::string& config_hash,
                         const std::string& command_line,
                         const std::string& path) {
  using nlohmann::json;
  json j;
  j["command"] = command_line;
  j["config_hash"] = config_hash;
  j["seed"] = config.seed;
  j["sampler"] = {{"chains", config.n_chains},
                  {"warmup", config.n_warmup},
                  {"sampling", config.n_sampling},
                  {"target_accept", config.target_accept},
                  {"max_tree_depth", config.max_tree_depth}};
  j["model"] = {{"n_a", fit.space.n_a},
                {"n_b", fit.space.n_b},
                {"covariates", fit.model_data.covariate_names}};
  j["data"] = {{"n_patients", fit.model_data.n_patients()},
               {"total_rows", fit.model_data.total_rows()},
               {"source", fit.model_data.meta}};
  j["unconstrained_layout"] = fit.layout.coordinate_names();
  j["constrained_names"] = fit.constrained_names;
  if (fit.qr.r_star.size() > 0) {
    json r = json::array();
    for (int a = 0; a < fit.qr.r_star.rows(); ++a) {
      json row = json::array();
      for (int b = 0; b < fit.qr.r_star.cols(); ++b)
        row.push_back(fit.qr.r_star(a, b));
      r.push_back(row);
    }
    j["qr_r_star"] = r;
  }
  json adapt;
  adapt["step_size"] = fit.draws.step_size;
  json masses = json::array();
  for (const auto& m : fit.draws.inv_mass) {
    json row = json::array();
    for (int i = 0; i < m.size(); ++i) row.push_back(m[i]);
    masses.push_back(row);
  }
  adapt["inv_mass"] = masses;
  j["adaptation"] = adapt;
  j["divergences"] = fit.draws.total_divergences();
  double rhat_max = 0.0;
  bool rhat_defined = true;
  for (int i = 0; i < fit.diagnostics.rhat.size(); ++i) {
    if (std::isnan(fit.diagnostics.rhat[i]))
      rhat_defined = false;
    else
      rhat_max = std::max(rhat_max, fit.diagnostics.rhat[i]);
  }
  j["rhat_max"] = rhat_max;
  j["rhat_all_defined"] = rhat_defined;
  j["converged"] = fit.diagnostics.converged();
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

LoadedFit load_fit_artifacts(const std::string& draws_path,
                             const std::string& manifest_path) {
  using nlohmann::json;
  std::ifstream min(manifest_path);
  if (!min) throw LoadError("cannot open manifest: " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const std::exception& e) {
    throw LoadError(std::string("manifest parse failure: ") + e.what());
  }
  LoadedFit fit;
  try {
    fit.n_a = manifest.at("model").at("n_a").get<int>();
    fit.n_b = manifest.at("model").at("n_b").get<int>();
    fit.covariate_names = manifest.at("model")
                              .at("covariates")
                              .get<std::vector<std::string>>();
    fit.seed = manifest.at("seed").get<std::uint64_t>();
    fit.config_hash = manifest.at("config_hash").get<std::string>();
    fit.converged = manifest.at("converged").get<bool>();
    fit.divergences = manifest.at("divergences").get<int>();
  } catch (const std::exception& e) {
    throw LoadError(std::string("manifest missing fields: ") + e.what());
  }

  std::ifstream in(draws_path);
  if (!in) throw LoadError("cannot open draws file: " + draws_path);
  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty draws file");
  std::vector<std::string> header;
  {
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  if (header.size() < 3 || header[0] != "chain" || header[1] != "iter")
    throw LoadError("draws header must start with chain,iter");
  fit.constrained_names.assign(header.begin() + 2, header.end());

  const StateSpace space(fit.n_a, fit.n_b);
  const std::vector<std::string> expected =
      constrained_parameter_names(space, fit.covariate_names);
  if (fit.constrained_names != expected)
    throw LoadError(
        "draws columns do not match the manifest's model description");

  const int n_con = static_cast<int>(fit.constrained_names.size());
  std::vector<std::vector<Eigen::VectorXd>> rows_per_chain;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f;
    if (!std::getline(ss, f, ',')) continue;
    int chain;
    try {
      chain = std::stoi(f);
    } catch (const std::exception&) {
      throw LoadError("draws line " + std::to_string(line_no) +
                      ": bad chain index");
    }
    if (!std::getline(ss, f, ','))
      throw LoadError("draws line " + std::to_string(line_no) + ": truncated");
    Eigen::VectorXd row(n_con);
    for (int j = 0; j < n_con; ++j) {
      if (!std::getline(ss, f, ','))
        throw LoadError("draws line " + std::to_string(line_no) +
                        ": expected " + std::to_string(n_con) + " values");
      try {
        row[j] = std::stod(f);
      } catch (const std::exception&) {
        throw LoadError("draws line " + std::to_string(line_no) +
                        ": cannot parse value '" + f + "'");
      }
    }
    if (chain < 1) throw LoadError("chain index must be positive");
    if (static_cast<int>(rows_per_chain.size()) < chain)
      rows_per_chain.resize(chain);
    rows_per_chain[chain - 1].push_back(std::move(row));
  }
  if (rows_per_chain.empty()) throw LoadError("draws file has no rows");
  const int n_iter = static_cast<int>(rows_per_chain[0].size());
  const int px = static_cast<int>(fit.covariate_names.size());
  for (auto& rows : rows_per_chain) {
    if (static_cast<int>(rows.size()) != n_iter)
      throw LoadError("chains have unequal draw counts");
    Eigen::MatrixXd block(n_iter, n_con);
    for (int i = 0; i < n_iter; ++i) {
      block.row(i) = rows[i];
      fit.draw_params.push_back(params_from_row(rows[i], space, px));
    }
    fit.constrained_chains.push_back(std::move(block));
  }
  return fit;
}

}  // namespace chmm
