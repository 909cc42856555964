// Command-line driver: subcommands over a shared JSON config with the
// precedence flag > config > default. Exit codes: 0 success, 2 usage,
// 3 data validation, 4 numeric failure, 5 strict-mode non-convergence.

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chmm/compare.hpp"
#include "chmm/diagnostics.hpp"
#include "chmm/errors.hpp"
#include "chmm/fit.hpp"
#include "chmm/inference.hpp"
#include "chmm/likelihood.hpp"
#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"
#include "chmm/simulate.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chmm;

namespace {

// ---------------------------------------------------------------- options

struct CommonOpts {
  std::string config_path;
  std::string out_flag;
  std::string data_flag;
  std::int64_t seed_flag = -1;
  bool strict_flag = false;
  int chains_flag = 0;
  int warmup_flag = -1;
  int sampling_flag = -1;
  int n_rep_flag = 0;
  int n_patients_flag = 0;
};

struct Ctx {
  json cfg = json::object();
  std::string cfg_hash;
  std::string out_dir;
  std::string command_line;
  CommonOpts opts;
};

// ------------------------------------------------------------ config I/O

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
  return buf;
}

json section(const json& root, const char* key) {
  if (!root.contains(key)) return json::object();
  const json& v = root.at(key);
  if (!v.is_object())
    throw UsageError(std::string("config field '") + key +
                     "' must be an object");
  return v;
}

int jint(const json& obj, const std::string& where, const char* key,
         int def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    throw UsageError("config field '" + where + "." + key +
                     "' must be an integer");
  return v.get<int>();
}

double jnum(const json& obj, const std::string& where, const char* key,
            double def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number())
    throw UsageError("config field '" + where + "." + key +
                     "' must be a number");
  return v.get<double>();
}

std::uint64_t juint(const json& obj, const std::string& where,
                    const char* key, std::uint64_t def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw UsageError("config field '" + where + "." + key +
                     "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string jstr(const json& obj, const std::string& where, const char* key,
                 const std::string& def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_string())
    throw UsageError("config field '" + where + "." + key +
                     "' must be a string");
  return v.get<std::string>();
}

bool jbool(const json& obj, const std::string& where, const char* key,
           bool def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_boolean())
    throw UsageError("config field '" + where + "." + key +
                     "' must be a boolean");
  return v.get<bool>();
}

std::vector<std::string> jstrvec(const json& obj, const std::string& where,
                                 const char* key) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const json& v = obj.at(key);
  if (!v.is_array())
    throw UsageError("config field '" + where + "." + key +
                     "' must be an array of strings");
  for (const auto& e : v) {
    if (!e.is_string())
      throw UsageError("config field '" + where + "." + key +
                       "' must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

json load_config(const std::string& path, std::string* raw_out) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  *raw_out = ss.str();
  try {
    json j = json::parse(*raw_out);
    if (!j.is_object())
      throw UsageError("config file must hold a JSON object: " + path);
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
}

// ------------------------------------------------------------- dir & lock

std::string resolve_out_dir(const CommonOpts& o, const json& cfg) {
  if (!o.out_flag.empty()) return o.out_flag;
  const char* root = std::getenv("CHMM_OUT_ROOT");
  const std::string from_cfg = jstr(cfg, "", "output_dir", "");
  if (!from_cfg.empty()) {
    fs::path p(from_cfg);
    if (p.is_relative() && root && *root) return (fs::path(root) / p).string();
    return from_cfg;
  }
  if (root && *root) return (fs::path(root) / "chmm_run").string();
  return "chmm_run";
}

// One run owns its output directory; the lock file makes that exclusive.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
      throw ValidationError("cannot create output directory '" + dir +
                            "': " + ec.message());
    path_ = (fs::path(dir) / ".chmm.lock").string();
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw UsageError("output directory '" + dir +
                       "' is in use (lock file " + path_ +
                       " exists); concurrent runs must target distinct "
                       "directories");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t n = ::write(fd_, pid.c_str(), pid.size());
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

// -------------------------------------------------------- config sections

ModelSpec parse_model(const Ctx& ctx) {
  const json m = section(ctx.cfg, "model");
  ModelSpec spec;
  spec.n_a = jint(m, "model", "n_a", 2);
  spec.n_b = jint(m, "model", "n_b", 2);
  if (m.contains("covariates")) {
    spec.covariates = jstrvec(m, "model", "covariates");
  } else {
    // One-config pipelines: the fit's design columns default to the
    // simulation's derivation list.
    const json sim = section(ctx.cfg, "simulate");
    spec.covariates = jstrvec(sim, "simulate", "derive");
  }
  return spec;
}

ChainConfig parse_sampler(const Ctx& ctx) {
  const json s = section(ctx.cfg, "sampler");
  ChainConfig cc;
  cc.n_chains = jint(s, "sampler", "chains", 4);
  cc.n_warmup = jint(s, "sampler", "warmup", 1500);
  cc.n_sampling = jint(s, "sampler", "sampling", 1500);
  cc.target_accept = jnum(s, "sampler", "target_accept", 0.8);
  cc.max_tree_depth = jint(s, "sampler", "max_tree_depth", 10);
  cc.seed = juint(s, "sampler", "seed", 1);
  if (ctx.opts.chains_flag > 0) cc.n_chains = ctx.opts.chains_flag;
  if (ctx.opts.warmup_flag >= 0) cc.n_warmup = ctx.opts.warmup_flag;
  if (ctx.opts.sampling_flag >= 0) cc.n_sampling = ctx.opts.sampling_flag;
  if (ctx.opts.seed_flag >= 0)
    cc.seed = static_cast<std::uint64_t>(ctx.opts.seed_flag);
  return cc;
}

SimulationConfig parse_sim(const Ctx& ctx) {
  const json sim = section(ctx.cfg, "simulate");
  SimulationConfig sc;
  sc.n_patients = jint(sim, "simulate", "n_patients", 100);
  sc.t_min = jint(sim, "simulate", "t_min", 4);
  sc.t_max = jint(sim, "simulate", "t_max", 10);
  sc.seed = juint(sim, "simulate", "seed", 1);
  if (ctx.opts.n_patients_flag > 0) sc.n_patients = ctx.opts.n_patients_flag;
  if (ctx.opts.seed_flag >= 0)
    sc.seed = static_cast<std::uint64_t>(ctx.opts.seed_flag);

  if (sim.contains("covariates")) {
    const json& arr = sim.at("covariates");
    if (!arr.is_array())
      throw UsageError(
          "config field 'simulate.covariates' must be an array of objects");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const json& g = arr[i];
      const std::string where = "simulate.covariates[" + std::to_string(i) + "]";
      if (!g.is_object())
        throw UsageError("config field '" + where + "' must be an object");
      CovariateGenerator gen;
      gen.name = jstr(g, where, "name", "");
      if (gen.name.empty())
        throw UsageError("config field '" + where + ".name' is required");
      const std::string kind = jstr(g, where, "kind", "normal");
      if (kind == "normal")
        gen.kind = CovariateGenerator::Kind::normal;
      else if (kind == "bernoulli")
        gen.kind = CovariateGenerator::Kind::bernoulli;
      else if (kind == "constant_normal")
        gen.kind = CovariateGenerator::Kind::constant_normal;
      else if (kind == "linear_t")
        gen.kind = CovariateGenerator::Kind::linear_t;
      else
        throw UsageError("config field '" + where + ".kind' must be one of "
                         "normal, bernoulli, constant_normal, linear_t");
      gen.mean = jnum(g, where, "mean", 0.0);
      gen.sd = jnum(g, where, "sd", 1.0);
      gen.rate = jnum(g, where, "rate", 0.5);
      gen.slope = jnum(g, where, "slope", 1.0);
      sc.generators.push_back(std::move(gen));
    }
  }
  sc.derive = jstrvec(sim, "simulate", "derive");

  const json model = section(ctx.cfg, "model");
  const int n_a = jint(model, "model", "n_a", 2);
  const int n_b = jint(model, "model", "n_b", 2);
  if (sim.contains("true_params_file")) {
    sc.true_params =
        Parameters::load_json(jstr(sim, "simulate", "true_params_file", ""));
  } else if (sim.contains("true_params")) {
    if (!sim.at("true_params").is_object())
      throw UsageError(
          "config field 'simulate.true_params' must be an object");
    sc.true_params = Parameters::from_json_text(sim.at("true_params").dump());
  } else {
    const int p = static_cast<int>(
        sc.derive.empty() ? sc.generators.size() : sc.derive.size());
    sc.true_params = make_empty_parameters(StateSpace(n_a, n_b), p);
  }
  return sc;
}

PanelDataset load_input_panel(const Ctx& ctx) {
  const json d = section(ctx.cfg, "data");
  std::string file = !ctx.opts.data_flag.empty()
                         ? ctx.opts.data_flag
                         : jstr(d, "data", "file", "");
  if (file.empty()) file = (fs::path(ctx.out_dir) / "panel.csv").string();
  return load_panel(file, jstrvec(d, "data", "log_columns"));
}

bool strict_mode(const Ctx& ctx) {
  return ctx.opts.strict_flag || jbool(ctx.cfg, "", "strict", false);
}

ProgressFn make_progress() {
  auto mu = std::make_shared<std::mutex>();
  return [mu](int chain, int done, int total) {
    std::lock_guard<std::mutex> g(*mu);
    std::fprintf(stderr, "\r[chain %d] %d/%d   ", chain + 1, done, total);
    if (done >= total) std::fprintf(stderr, "\n");
    std::fflush(stderr);
  };
}

// ------------------------------------------------- fit artifact handling

std::string draws_path(const Ctx& ctx) {
  return (fs::path(ctx.out_dir) / "draws.csv").string();
}
std::string manifest_path(const Ctx& ctx) {
  return (fs::path(ctx.out_dir) / "manifest.json").string();
}

struct PostFit {
  LoadedFit fit;
  PanelDataset model_data;  // empty unless requested
};

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

PostFit load_post_fit(const Ctx& ctx, bool need_data) {
  PostFit pf;
  pf.fit = load_fit_artifacts(draws_path(ctx), manifest_path(ctx));
  const ModelSpec model = parse_model(ctx);
  std::vector<std::string> divergent;
  if (model.n_a != pf.fit.n_a)
    divergent.push_back("model.n_a (config " + std::to_string(model.n_a) +
                        ", manifest " + std::to_string(pf.fit.n_a) + ")");
  if (model.n_b != pf.fit.n_b)
    divergent.push_back("model.n_b (config " + std::to_string(model.n_b) +
                        ", manifest " + std::to_string(pf.fit.n_b) + ")");
  if (need_data) {
    const PanelDataset raw = load_input_panel(ctx);
    pf.model_data = apply_derivations(raw, model.covariates);
    if (pf.model_data.covariate_names != pf.fit.covariate_names)
      divergent.push_back(
          "model covariate columns (config -> [" +
          join(pf.model_data.covariate_names, ", ") + "], manifest [" +
          join(pf.fit.covariate_names, ", ") + "])");
  }
  if (!divergent.empty())
    throw ValidationError(
        "fit artifacts in '" + ctx.out_dir +
        "' do not match this config; divergent fields: " +
        join(divergent, "; "));
  return pf;
}

// ------------------------------------------------------------- commands

int cmd_simulate(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const SimulationConfig sc = parse_sim(ctx);
  const SimulatedPanel sim = simulate_dataset(sc);
  const std::string panel_file = (fs::path(ctx.out_dir) / "panel.csv").string();
  const std::string truth_file = (fs::path(ctx.out_dir) / "truth.json").string();
  write_panel(sim.raw, panel_file);
  sc.true_params.save_json(truth_file);
  std::printf("simulated %d patients, %d rows -> %s\n", sim.raw.n_patients(),
              sim.raw.total_rows(), panel_file.c_str());
  std::printf("true parameters -> %s\n", truth_file.c_str());
  return 0;
}

void print_diag_summary(const DiagnosticsReport& rep) {
  double rhat_max = 0.0, ess_min = std::numeric_limits<double>::infinity();
  int rhat_nan = 0;
  for (int i = 0; i < rep.rhat.size(); ++i) {
    if (std::isnan(rep.rhat[i]))
      ++rhat_nan;
    else
      rhat_max = std::max(rhat_max, rep.rhat[i]);
    if (!std::isnan(rep.ess[i])) ess_min = std::min(ess_min, rep.ess[i]);
  }
  std::printf("max split R-hat %.4f", rhat_max);
  if (rhat_nan > 0) std::printf(" (%d undefined)", rhat_nan);
  std::printf(", min ESS %.1f, divergences %d\n", ess_min, rep.divergences);
  std::printf("converged: %s\n", rep.converged() ? "yes" : "no");
}

int cmd_fit(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const ModelSpec model = parse_model(ctx);
  const ChainConfig cc = parse_sampler(ctx);
  const PanelDataset panel = load_input_panel(ctx);
  const FitResult fit = run_fit(panel, model, cc, make_progress());

  write_draws_csv(fit, draws_path(ctx));
  write_diagnostics_csv(fit.diagnostics,
                        (fs::path(ctx.out_dir) / "diagnostics.csv").string());
  write_traceplot_csvs(fit, (fs::path(ctx.out_dir) / "traceplots").string());
  write_manifest_json(fit, cc, ctx.cfg_hash, ctx.command_line,
                      manifest_path(ctx));
  std::printf("fit: %d chains x %d draws, %d parameters, %d patients\n",
              cc.n_chains, cc.n_sampling,
              static_cast<int>(fit.constrained_names.size()),
              fit.model_data.n_patients());
  print_diag_summary(fit.diagnostics);
  std::printf("wrote %s/{draws.csv,diagnostics.csv,manifest.json,traceplots/}\n",
              ctx.out_dir.c_str());
  if (strict_mode(ctx) && !fit.diagnostics.converged()) {
    std::fprintf(stderr, "error: chains did not converge (strict mode)\n");
    return 5;
  }
  return 0;
}

int cmd_diagnose(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const PostFit pf = load_post_fit(ctx, false);
  const DiagnosticsReport rep = diagnose(
      pf.fit.constrained_chains, pf.fit.constrained_names, pf.fit.divergences);
  write_diagnostics_csv(rep,
                        (fs::path(ctx.out_dir) / "diagnostics.csv").string());
  print_diag_summary(rep);
  std::printf("wrote %s/diagnostics.csv\n", ctx.out_dir.c_str());
  if (strict_mode(ctx) && !rep.converged()) {
    std::fprintf(stderr, "error: chains did not converge (strict mode)\n");
    return 5;
  }
  return 0;
}

int cmd_decode(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const PostFit pf = load_post_fit(ctx, true);
  const Parameters pm = pf.fit.posterior_mean_params();
  const std::string path = (fs::path(ctx.out_dir) / "decode.csv").string();
  write_decode_csv(pm, pf.model_data, path);
  std::printf("decoded %d patients with posterior-mean parameters -> %s\n",
              pf.model_data.n_patients(), path.c_str());
  return 0;
}

int cmd_ppc(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const PostFit pf = load_post_fit(ctx, true);
  const json p = section(ctx.cfg, "ppc");
  int n_rep = jint(p, "ppc", "n_rep", 200);
  std::uint64_t seed = juint(p, "ppc", "seed", pf.fit.seed);
  if (ctx.opts.n_rep_flag > 0) n_rep = ctx.opts.n_rep_flag;
  if (ctx.opts.seed_flag >= 0)
    seed = static_cast<std::uint64_t>(ctx.opts.seed_flag);
  const PpcResult r =
      posterior_predictive(pf.fit.draw_params, pf.model_data, n_rep, seed);
  const std::string path = (fs::path(ctx.out_dir) / "ppc.csv").string();
  write_ppc_csv(r, path);
  json summary = {{"coverage50", r.coverage50},
                  {"coverage90", r.coverage90},
                  {"n_observations", r.n_observations},
                  {"n_rep", n_rep},
                  {"seed", seed}};
  std::ofstream out((fs::path(ctx.out_dir) / "ppc_summary.json").string());
  out << summary.dump(2) << "\n";
  std::printf(
      "posterior predictive: 50%% interval coverage %.3f, 90%% coverage "
      "%.3f over %d observations (%d replicates)\n",
      r.coverage50, r.coverage90, r.n_observations, n_rep);
  std::printf("wrote %s/{ppc.csv,ppc_summary.json}\n", ctx.out_dir.c_str());
  return 0;
}

int cmd_spillover(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const PostFit pf = load_post_fit(ctx, true);
  const json sp = section(ctx.cfg, "spillover");
  const StateSpace space(pf.fit.n_a, pf.fit.n_b);

  SpilloverSpec spec;
  const int p = pf.model_data.n_covariates();
  spec.profile = Eigen::VectorXd::Zero(p);
  double total_rows = 0.0;
  for (const auto& pat : pf.model_data.patients) {
    for (int t = 0; t < pat.T(); ++t) spec.profile += pat.x.row(t).transpose();
    total_rows += pat.T();
  }
  if (total_rows > 0) spec.profile /= total_rows;
  if (sp.contains("profile")) {
    const json& prof = sp.at("profile");
    if (!prof.is_object())
      throw UsageError(
          "config field 'spillover.profile' must map covariate names to "
          "values");
    for (const auto& [name, val] : prof.items()) {
      if (!val.is_number())
        throw UsageError("config field 'spillover.profile." + name +
                         "' must be a number");
      spec.profile[pf.model_data.covariate_index(name)] = val.get<double>();
    }
  }

  const std::string treat = jstr(sp, "spillover", "treatment", "");
  if (treat.empty())
    throw UsageError(
        "config field 'spillover.treatment' must name a model covariate");
  spec.treatment_index = pf.model_data.covariate_index(treat);
  std::string lag = jstr(sp, "spillover", "treatment_lag", "");
  if (lag.empty()) {
    const std::string guess = treat + "_lag1";
    for (const auto& n : pf.model_data.covariate_names)
      if (n == guess) lag = guess;
  }
  spec.treatment_lag_index =
      lag.empty() ? -1 : pf.model_data.covariate_index(lag);
  spec.treated_value = jnum(sp, "spillover", "treated_value", 0.5);
  spec.untreated_value = jnum(sp, "spillover", "untreated_value", -0.5);

  if (sp.contains("path")) {
    const json& path = sp.at("path");
    if (!path.is_array() || path.size() != 3)
      throw UsageError(
          "config field 'spillover.path' must be three [state_a,state_b] "
          "pairs (1-based)");
    for (int i = 0; i < 3; ++i) {
      const json& pair = path[i];
      if (!pair.is_array() || pair.size() != 2 ||
          !pair[0].is_number_integer() || !pair[1].is_number_integer())
        throw UsageError(
            "config field 'spillover.path' must be three [state_a,state_b] "
            "pairs (1-based)");
      spec.path[i] =
          space.global_index(pair[0].get<int>() - 1, pair[1].get<int>() - 1);
    }
  } else {
    if (pf.fit.n_a < 2 || pf.fit.n_b < 2)
      throw ValidationError(
          "default spill-over path needs two states per disease; give "
          "spillover.path explicitly");
    spec.path = {space.global_index(1, 1), space.global_index(0, 1),
                 space.global_index(0, 0)};
  }

  const SpilloverReport rep = spillover(pf.fit.draw_params, spec);
  const std::string path = (fs::path(ctx.out_dir) / "spillover.csv").string();
  write_spillover_csv(rep, path);

  const auto rows = conditional_transition_summary(pf.fit.draw_params,
                                                   spec.profile);
  const std::string tpath =
      (fs::path(ctx.out_dir) / "transition_summary.csv").string();
  write_transition_summary_csv(rows, tpath);

  std::printf("spill-over medians: treated %.4g, untreated %.4g, "
              "difference %.4g, quotient %.4g (%d draws)\n",
              rep.quantiles(0, 2), rep.quantiles(1, 2), rep.quantiles(2, 2),
              rep.quantiles(3, 2), rep.n_draws);
  if (rep.overflow_warning)
    std::printf("warning: untreated path probability at machine zero in %d "
                "draws; quotient quantiles exclude them\n",
                rep.n_quotient_overflow);
  std::printf("wrote %s and %s\n", path.c_str(), tpath.c_str());
  return 0;
}

int cmd_compare(Ctx& ctx) {
  DirLock lock(ctx.out_dir);
  const ModelSpec model = parse_model(ctx);
  ChainConfig cc = parse_sampler(ctx);
  const json cmp = section(ctx.cfg, "compare");
  cc.n_chains = jint(cmp, "compare", "chains", cc.n_chains);
  cc.n_warmup = jint(cmp, "compare", "warmup", cc.n_warmup);
  cc.n_sampling = jint(cmp, "compare", "sampling", cc.n_sampling);
  const PanelDataset panel = load_input_panel(ctx);

  // When a fit already lives in this directory, refuse shape mismatches
  // early instead of comparing against something the artifacts don't hold.
  if (fs::exists(manifest_path(ctx)) && fs::exists(draws_path(ctx)))
    (void)load_post_fit(ctx, true);

  std::vector<VariantSpec> variants;
  if (cmp.contains("variants")) {
    const json& arr = cmp.at("variants");
    if (!arr.is_array())
      throw UsageError(
          "config field 'compare.variants' must be an array of objects");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "compare.variants[" + std::to_string(i) + "]";
      if (!arr[i].is_object())
        throw UsageError("config field '" + where + "' must be an object");
      VariantSpec v;
      v.n_a = jint(arr[i], where, "n_a", model.n_a);
      v.n_b = jint(arr[i], where, "n_b", model.n_b);
      v.label = jstr(arr[i], where, "label",
                     std::to_string(v.n_a) + "x" + std::to_string(v.n_b));
      variants.push_back(std::move(v));
    }
  }

  const CompareReport rep =
      fit_variants(panel, model, cc, variants, make_progress());
  write_compare_csv(rep, (fs::path(ctx.out_dir) / "compare.csv").string());
  const std::string table = render_compare_table(rep);
  std::ofstream out((fs::path(ctx.out_dir) / "compare.txt").string());
  out << table;
  std::fputs(table.c_str(), stdout);
  std::printf("wrote %s/{compare.csv,compare.txt}\n", ctx.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled two-disease hidden Markov model toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&opts](CLI::App* sub, bool with_data, bool with_sampler) {
    sub->add_option("-c,--config", opts.config_path, "JSON config file");
    sub->add_option("-o,--out", opts.out_flag,
                    "output directory (overrides config.output_dir and "
                    "CHMM_OUT_ROOT)");
    sub->add_option("--seed", opts.seed_flag,
                    "seed override for this command's primary operation");
    sub->add_flag("--strict", opts.strict_flag,
                  "exit 5 when chains have not converged");
    if (with_data)
      sub->add_option("--data", opts.data_flag,
                      "panel CSV (overrides config data.file)");
    if (with_sampler) {
      sub->add_option("--chains", opts.chains_flag, "number of chains");
      sub->add_option("--warmup", opts.warmup_flag,
                      "warm-up iterations per chain");
      sub->add_option("--sampling", opts.sampling_flag,
                      "sampling iterations per chain");
    }
  };

  CLI::App* c_sim = app.add_subcommand(
      "simulate", "generate a synthetic cohort and its true parameters");
  add_common(c_sim, false, false);
  c_sim->add_option("--n-patients", opts.n_patients_flag,
                    "number of simulated patients");

  CLI::App* c_fit = app.add_subcommand(
      "fit", "sample the posterior and write draws + manifest + diagnostics");
  add_common(c_fit, true, true);

  CLI::App* c_diag = app.add_subcommand(
      "diagnose", "recompute convergence diagnostics from saved draws");
  add_common(c_diag, false, false);

  CLI::App* c_dec = app.add_subcommand(
      "decode", "most probable state paths under posterior-mean parameters");
  add_common(c_dec, true, false);

  CLI::App* c_ppc = app.add_subcommand(
      "ppc", "posterior predictive replicates and interval coverage");
  add_common(c_ppc, true, false);
  c_ppc->add_option("--n-rep", opts.n_rep_flag, "number of replicates");

  CLI::App* c_spill = app.add_subcommand(
      "spillover", "two-step treated vs untreated path probabilities");
  add_common(c_spill, true, false);

  CLI::App* c_cmp = app.add_subcommand(
      "compare", "fit model variants and report predictive performance");
  add_common(c_cmp, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Ctx ctx;
    ctx.opts = opts;
    std::string raw = "{}";
    if (!opts.config_path.empty())
      ctx.cfg = load_config(opts.config_path, &raw);
    ctx.cfg_hash = hex64(fnv1a(raw));
    ctx.out_dir = resolve_out_dir(opts, ctx.cfg);
    for (int i = 0; i < argc; ++i) {
      if (i) ctx.command_line += ' ';
      ctx.command_line += argv[i];
    }

    if (c_sim->parsed()) return cmd_simulate(ctx);
    if (c_fit->parsed()) return cmd_fit(ctx);
    if (c_diag->parsed()) return cmd_diagnose(ctx);
    if (c_dec->parsed()) return cmd_decode(ctx);
    if (c_ppc->parsed()) return cmd_ppc(ctx);
    if (c_spill->parsed()) return cmd_spillover(ctx);
    if (c_cmp->parsed()) return cmd_compare(ctx);
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ValidationError& e) {  // includes load errors
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
