#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace chmm {

// Log-density with gradient over an unconstrained space. Fills grad and
// returns the value; returning -infinity rejects the point.
using TargetFn =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct ChainConfig {
  int n_chains = 4;
  int n_warmup = 1500;
  int n_sampling = 1500;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct IterationMeta {
  bool divergent = false;
  int tree_depth = 0;
  double step_size = 0.0;
  double accept_stat = 0.0;
};

// Post-warm-up draws: one (n_sampling x dim) block per chain plus
// per-iteration metadata and the adaptation outcome.
struct Draws {
  std::vector<Eigen::MatrixXd> chains;
  std::vector<std::vector<IterationMeta>> meta;
  std::vector<double> step_size;             // adapted, per chain
  std::vector<Eigen::VectorXd> inv_mass;     // adapted diagonal, per chain

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_iter() const { return chains.empty() ? 0 : static_cast<int>(chains[0].rows()); }
  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains[0].cols()); }
  int total_divergences() const;
  // Flattened (n_chains*n_iter) x dim matrix, chain-major.
  Eigen::MatrixXd stacked() const;
};

// Called as (chain, iterations done, iterations total) roughly every 100
// iterations; total spans warm-up plus sampling.
using ProgressFn = std::function<void(int, int, int)>;

// No-U-Turn sampling with dual-averaging step-size adaptation and staged
// diagonal mass-matrix estimation during warm-up. One init point per chain;
// each chain owns an independent RNG stream derived from (seed, chain).
// Chains may run on separate threads; results do not depend on scheduling.
Draws nuts_sample(const TargetFn& target, int dim, const ChainConfig& config,
                  const std::vector<Eigen::VectorXd>& inits,
                  const ProgressFn& progress = nullptr);

}  // namespace chmm
