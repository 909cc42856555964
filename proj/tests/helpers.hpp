#pragma once

#include <unistd.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <string>

#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"
#include "chmm/rng.hpp"

namespace chmm::test {

// Random valid parameters: ordered means with gaps >= 0.3, moderate
// sigmas, a Dirichlet-ish simplex, and bounded alpha/beta so transition
// rows stay well away from degeneracy.
inline Parameters random_params(const StateSpace& space, int p, Rng& rng) {
  Parameters par = make_empty_parameters(space, p);
  double m = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < space.n_a; ++i) {
    par.mu_a[i] = m;
    m += rng.uniform(0.3, 1.5);
  }
  m = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < space.n_b; ++i) {
    par.mu_b[i] = m;
    m += rng.uniform(0.3, 1.5);
  }
  par.sigma_a = rng.uniform(0.2, 1.2);
  par.sigma_b = rng.uniform(0.2, 1.2);
  const int G = space.n_global();
  double total = 0.0;
  for (int g = 0; g < G; ++g) {
    par.pi[g] = -std::log(rng.uniform_pos());
    total += par.pi[g];
  }
  par.pi /= total;
  // Exact renormalization so validate()'s 1e-12 simplex check holds.
  par.pi[G - 1] = 1.0 - par.pi.head(G - 1).sum();
  for (int j = 0; j < G; ++j) {
    for (int k = 0; k < G; ++k) {
      if (j == k) continue;
      par.alpha(j, k) = rng.uniform(-2.0, 2.0);
      for (int c = 0; c < p; ++c) {
        par.beta(j * G + k, c) = rng.uniform(-1.0, 1.0);
      }
    }
  }
  return par;
}

// Random patient series consistent with the parameters: covariates are
// standard normal; observations land near the emission means so the
// likelihood surface is informative but not degenerate.
inline PatientSeries random_patient(const Parameters& par, int T, Rng& rng) {
  PatientSeries pat;
  pat.id = "p" + std::to_string(rng.uniform_int(0, 999999));
  pat.y_a.resize(T);
  pat.y_b.resize(T);
  pat.x.resize(T, par.n_covariates());
  for (int t = 0; t < T; ++t) {
    const int sa = rng.uniform_int(0, par.space.n_a - 1);
    const int sb = rng.uniform_int(0, par.space.n_b - 1);
    pat.y_a[t] = rng.normal(par.mu_a[sa], par.sigma_a);
    pat.y_b[t] = rng.normal(par.mu_b[sb], par.sigma_b);
    for (int c = 0; c < par.n_covariates(); ++c) pat.x(t, c) = rng.normal();
  }
  return pat;
}

// Unique scratch directory under the system temp root, removed on scope
// exit so test reruns start clean.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() /
                ("chmm_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);
    path_ = base.string();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

}  // namespace chmm::test
