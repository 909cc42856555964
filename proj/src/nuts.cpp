#include "chmm/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "chmm/errors.hpp"
#include "chmm/rng.hpp"

namespace chmm {

void ChainConfig::validate() const {
  if (n_chains < 1 || n_warmup < 1 || n_sampling < 1)
    throw ValidationError("chain counts must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ValidationError("target_accept must lie in (0,1)");
  if (max_tree_depth < 1 || max_tree_depth > 14)
    throw ValidationError("max_tree_depth must lie in [1,14]");
}

int Draws::total_divergences() const {
  int n = 0;
  for (const auto& chain : meta)
    for (const auto& m : chain) n += m.divergent ? 1 : 0;
  return n;
}

Eigen::MatrixXd Draws::stacked() const {
  Eigen::MatrixXd out(n_chains() * n_iter(), dim());
  for (int c = 0; c < n_chains(); ++c)
    out.middleRows(c * n_iter(), n_iter()) = chains[c];
  return out;
}

namespace {

constexpr double kMaxEnergyError = 1000.0;
constexpr double neg_inf = -std::numeric_limits<double>::infinity();

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double logpost = neg_inf;
};

// One chain's sampler state: leapfrog integrator, recursive tree builder,
// warm-up adaptation schedule.
class NutsChain {
 public:
  NutsChain(const TargetFn& target, int dim, const ChainConfig& cfg,
            int chain_id, const Eigen::VectorXd& init,
            const ProgressFn& progress)
      : target_(target),
        dim_(dim),
        cfg_(cfg),
        chain_id_(chain_id),
        progress_(progress),
        rng_(splitmix64(cfg.seed), static_cast<std::uint64_t>(chain_id) + 1),
        inv_mass_(Eigen::VectorXd::Ones(dim)),
        mom_sd_(Eigen::VectorXd::Ones(dim)) {
    cur_.q = init;
    cur_.grad.resize(dim);
    cur_.logpost = target_(cur_.q, cur_.grad);
    if (!std::isfinite(cur_.logpost))
      throw NumericError("chain " + std::to_string(chain_id + 1) +
                         ": log posterior not finite at the initial point");
  }

  void run(Eigen::MatrixXd& draws_out, std::vector<IterationMeta>& meta_out,
           double& step_out, Eigen::VectorXd& inv_mass_out) {
    adapt_run();
    draws_out.resize(cfg_.n_sampling, dim_);
    meta_out.resize(cfg_.n_sampling);
    for (int i = 0; i < cfg_.n_sampling; ++i) {
      meta_out[i] = transition();
      draws_out.row(i) = cur_.q;
      tick(cfg_.n_warmup + i + 1);
    }
    step_out = eps_;
    inv_mass_out = inv_mass_;
  }

 private:
  double kinetic(const Eigen::VectorXd& p) const {
    return 0.5 * (p.array().square() * inv_mass_.array()).sum();
  }

  void sample_momentum(Eigen::VectorXd& p) {
    p.resize(dim_);
    for (int i = 0; i < dim_; ++i) p[i] = rng_.normal() * mom_sd_[i];
  }

  // One leapfrog step of size dir*eps from z, in place.
  void leapfrog(PhasePoint& z, double dir) {
    const double h = dir * eps_;
    z.p += 0.5 * h * z.grad;
    z.q.array() += h * z.p.array() * inv_mass_.array();
    z.logpost = target_(z.q, z.grad);
    z.p += 0.5 * h * z.grad;
  }

  bool uturn(const Eigen::VectorXd& p_first, const Eigen::VectorXd& p_last,
             const Eigen::VectorXd& rho) const {
    const double a =
        (p_first.array() * inv_mass_.array() * rho.array()).sum();
    const double b = (p_last.array() * inv_mass_.array() * rho.array()).sum();
    return a <= 0.0 || b <= 0.0;
  }

  struct SubTree {
    PhasePoint near, far;   // extremes in growth order
    PhasePoint prop;
    Eigen::VectorXd rho;
    double log_sum_w = neg_inf;
    bool divergent = false;
    bool turning = false;
  };

  // Builds 2^depth new states extending from z_from in direction dir.
  SubTree build_tree(int depth, const PhasePoint& z_from, double dir,
                     double h0) {
    if (depth == 0) {
      SubTree leaf;
      PhasePoint z = z_from;
      leapfrog(z, dir);
      double h = -z.logpost + kinetic(z.p);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      const double lw = h0 - h;
      if (-lw > kMaxEnergyError) leaf.divergent = true;
      leaf.log_sum_w = lw;
      sum_metro_ += (lw > 0.0) ? 1.0 : std::exp(lw);
      ++n_leapfrog_;
      leaf.rho = z.p;
      leaf.near = z;
      leaf.far = z;
      leaf.prop = std::move(z);
      return leaf;
    }
    SubTree left = build_tree(depth - 1, z_from, dir, h0);
    if (left.divergent || left.turning) return left;
    SubTree right = build_tree(depth - 1, left.far, dir, h0);
    if (right.divergent || right.turning) {
      left.divergent = right.divergent;
      left.turning = right.turning;
      return left;
    }
    SubTree tree;
    tree.log_sum_w = log_sum_exp(left.log_sum_w, right.log_sum_w);
    // Multinomial choice between the halves, proportional to their weights.
    const double u = rng_.uniform();
    tree.prop = (std::log(u) < right.log_sum_w - tree.log_sum_w)
                    ? std::move(right.prop)
                    : std::move(left.prop);
    tree.rho = left.rho + right.rho;
    tree.near = std::move(left.near);
    tree.far = std::move(right.far);
    tree.turning = uturn(tree.near.p, tree.far.p, tree.rho);
    return tree;
  }

  static double log_sum_exp(double a, double b) {
    if (a == neg_inf) return b;
    if (b == neg_inf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  }

  IterationMeta transition() {
    PhasePoint z = cur_;
    sample_momentum(z.p);
    const double h0 = -z.logpost + kinetic(z.p);

    PhasePoint z_minus = z, z_plus = z;
    PhasePoint prop = z;
    Eigen::VectorXd rho = z.p;
    double log_sum_w = 0.0;  // weight exp(h0-h0)=1 for the start point
    sum_metro_ = 0.0;
    n_leapfrog_ = 0;

    IterationMeta meta;
    meta.step_size = eps_;
    for (int depth = 0; depth < cfg_.max_tree_depth; ++depth) {
      const double dir = rng_.bernoulli(0.5) ? 1.0 : -1.0;
      SubTree sub =
          build_tree(depth, dir > 0 ? z_plus : z_minus, dir, h0);
      if (sub.divergent) {
        meta.divergent = true;
        break;
      }
      if (sub.turning) break;
      // Biased progressive sampling favors the fresh half of the
      // trajectory.
      if (std::log(rng_.uniform()) < sub.log_sum_w - log_sum_w)
        prop = sub.prop;
      log_sum_w = log_sum_exp(log_sum_w, sub.log_sum_w);
      rho += sub.rho;
      if (dir > 0)
        z_plus = std::move(sub.far);
      else
        z_minus = std::move(sub.far);
      meta.tree_depth = depth + 1;
      if (uturn(z_minus.p, z_plus.p, rho)) break;
    }
    meta.accept_stat =
        n_leapfrog_ > 0 ? sum_metro_ / double(n_leapfrog_) : 0.0;
    cur_ = std::move(prop);
    return meta;
  }

  // Doubles or halves eps until one step changes the Hamiltonian by about
  // a factor exp(log 0.8).
  void find_reasonable_epsilon() {
    eps_ = 1.0;
    const double log_bar = std::log(0.8);
    for (int iter = 0; iter < 50; ++iter) {
      PhasePoint z = cur_;
      sample_momentum(z.p);
      const double h0 = -z.logpost + kinetic(z.p);
      leapfrog(z, 1.0);
      double h = -z.logpost + kinetic(z.p);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      const double dh = h0 - h;
      if (iter == 0) {
        direction_ = dh > log_bar ? 1 : -1;
      }
      if (direction_ == 1) {
        if (!(dh > log_bar)) return;
        eps_ *= 2.0;
      } else {
        if (!(dh < log_bar)) return;
        eps_ *= 0.5;
      }
      if (eps_ > 1e7 || eps_ < 1e-16)
        throw NumericError("step-size search failed to bracket");
    }
  }

  // Dual averaging toward the target acceptance statistic.
  struct DualAverage {
    double mu = 0.0, log_eps_bar = 0.0, s_bar = 0.0;
    int counter = 0;
    static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

    void restart(double eps) {
      mu = std::log(10.0 * eps);
      log_eps_bar = 0.0;
      s_bar = 0.0;
      counter = 0;
    }
    double update(double adapt_stat, double delta) {
      ++counter;
      adapt_stat = std::min(adapt_stat, 1.0);
      const double eta = 1.0 / (counter + t0);
      s_bar = (1.0 - eta) * s_bar + eta * (delta - adapt_stat);
      const double log_eps = mu - s_bar * std::sqrt(double(counter)) / gamma;
      const double x_eta = std::pow(double(counter), -kappa);
      log_eps_bar = (1.0 - x_eta) * log_eps_bar + x_eta * log_eps;
      return std::exp(log_eps);
    }
    double finalized() const { return std::exp(log_eps_bar); }
  };

  void adapt_run() {
    find_reasonable_epsilon();
    da_.restart(eps_);

    // Staged windows: a step-size-only opening buffer, doubling
    // variance-estimation windows, and a step-size-only closing buffer.
    int init_buf = 75, term_buf = 50, base_win = 25;
    const int n = cfg_.n_warmup;
    if (n < init_buf + term_buf + base_win) {
      init_buf = std::max(1, int(0.15 * n));
      term_buf = std::max(1, int(0.10 * n));
      base_win = std::max(1, n - init_buf - term_buf);
    }
    int window_end = init_buf + base_win;
    int window_size = base_win;
    // The final estimation window is stretched to meet the closing buffer.
    auto next_window = [&]() {
      window_size *= 2;
      int end = window_end + window_size;
      if (end + 2 * window_size > n - term_buf) end = n - term_buf;
      window_end = end;
    };
    if (window_end + 2 * window_size > n - term_buf) window_end = n - term_buf;

    std::vector<Eigen::VectorXd> window_draws;
    for (int i = 0; i < n; ++i) {
      IterationMeta meta = transition();
      tick(i + 1);
      eps_ = da_.update(meta.accept_stat, cfg_.target_accept);
      const bool in_window = i >= init_buf && i < n - term_buf;
      if (in_window) window_draws.push_back(cur_.q);
      if (in_window && i + 1 == window_end) {
        update_mass(window_draws);
        window_draws.clear();
        find_reasonable_epsilon();
        da_.restart(eps_);
        next_window();
      }
    }
    eps_ = da_.finalized();
  }

  void update_mass(const std::vector<Eigen::VectorXd>& qs) {
    const int m = static_cast<int>(qs.size());
    if (m < 4) return;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim_);
    for (const auto& q : qs) mean += q;
    mean /= double(m);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim_);
    for (const auto& q : qs) var += (q - mean).array().square().matrix();
    var /= double(m - 1);
    // Shrink toward a small constant, as a regularized variance estimate.
    const double w = double(m) / (m + 5.0);
    inv_mass_ = w * var.array() + (1.0 - w) * 1e-3;
    for (int i = 0; i < dim_; ++i)
      mom_sd_[i] = 1.0 / std::sqrt(inv_mass_[i]);
  }

  void tick(int done) const {
    if (progress_ && (done % 100 == 0 ||
                      done == cfg_.n_warmup + cfg_.n_sampling))
      progress_(chain_id_, done, cfg_.n_warmup + cfg_.n_sampling);
  }

  const TargetFn& target_;
  int dim_;
  ChainConfig cfg_;
  int chain_id_ = 0;
  const ProgressFn& progress_;
  Rng rng_;
  Eigen::VectorXd inv_mass_, mom_sd_;
  PhasePoint cur_;
  double eps_ = 1.0;
  int direction_ = 1;
  double sum_metro_ = 0.0;
  int n_leapfrog_ = 0;
  DualAverage da_;
};

}  // namespace

Draws nuts_sample(const TargetFn& target, int dim, const ChainConfig& config,
                  const std::vector<Eigen::VectorXd>& inits,
                  const ProgressFn& progress) {
  config.validate();
  if (static_cast<int>(inits.size()) != config.n_chains)
    throw ValidationError("need one init point per chain, got " +
                          std::to_string(inits.size()) + " for " +
                          std::to_string(config.n_chains) + " chains");
  for (const auto& q : inits)
    if (q.size() != dim)
      throw ValidationError("init point dimension mismatch");

  Draws draws;
  draws.chains.resize(config.n_chains);
  draws.meta.resize(config.n_chains);
  draws.step_size.resize(config.n_chains);
  draws.inv_mass.resize(config.n_chains);

  auto run_chain = [&](int c) {
    NutsChain chain(target, dim, config, c, inits[c], progress);
    chain.run(draws.chains[c], draws.meta[c], draws.step_size[c],
              draws.inv_mass[c]);
  };

  const unsigned hw = std::thread::hardware_concurrency();
  if (config.n_chains > 1 && hw > 1) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(config.n_chains);
    threads.reserve(config.n_chains);
    for (int c = 0; c < config.n_chains; ++c)
      threads.emplace_back([&, c]() {
        try {
          run_chain(c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (int c = 0; c < config.n_chains; ++c) run_chain(c);
  }
  return draws;
}

}  // namespace chmm
