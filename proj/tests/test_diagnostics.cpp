#include <cmath>
#include <fstream>

#include "chmm/diagnostics.hpp"
#include "chmm/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace chmm;

namespace {

std::vector<Eigen::VectorXd> iid_chains(int n_chains, int n, double mean,
                                        double sd, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> chains;
  Rng rng(seed);
  for (int c = 0; c < n_chains; ++c) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal(mean, sd);
    chains.push_back(v);
  }
  return chains;
}

}  // namespace

TEST_CASE("exchangeable chains get rhat near one") {
  auto chains = iid_chains(4, 500, 0.0, 1.0, 21);
  const double rhat = compute_rhat(chains);
  CHECK(rhat >= 1.0 - 1e-8);
  CHECK(rhat < 1.05);
}

TEST_CASE("a ten-sigma location offset blows rhat past two") {
  auto chains = iid_chains(2, 400, 0.0, 1.0, 22);
  chains.push_back(iid_chains(1, 400, 10.0, 1.0, 23)[0]);
  CHECK(compute_rhat(chains) > 2.0);
}

TEST_CASE("split-chain rhat catches a within-chain drift") {
  // One chain wanders from -3 to +3; stationary chains would pass a
  // non-split diagnostic, the split variant must not.
  Eigen::VectorXd drift(400);
  for (int i = 0; i < 400; ++i) drift[i] = -3.0 + 6.0 * i / 399.0;
  std::vector<Eigen::VectorXd> chains = {drift, drift};
  CHECK(compute_rhat(chains) > 1.5);
}

TEST_CASE("degenerate inputs yield NaN rather than a crash") {
  SUBCASE("zero within-chain variance") {
    std::vector<Eigen::VectorXd> chains = {
        Eigen::VectorXd::Constant(100, 2.0),
        Eigen::VectorXd::Constant(100, 2.0)};
    CHECK(std::isnan(compute_rhat(chains)));
    CHECK(std::isnan(compute_ess(chains)));
  }
  SUBCASE("too few iterations") {
    std::vector<Eigen::VectorXd> chains = {Eigen::VectorXd::Zero(3),
                                           Eigen::VectorXd::Zero(3)};
    CHECK(std::isnan(compute_rhat(chains)));
  }
  SUBCASE("fewer than two chains is undefined") {
    auto one = iid_chains(1, 10, 0.0, 1.0, 4);
    CHECK(std::isnan(compute_rhat({})));
    CHECK(std::isnan(compute_rhat(one)));
  }
}

TEST_CASE("independent draws have ESS near the raw draw count") {
  auto chains = iid_chains(4, 1000, 0.0, 1.0, 31);
  const double ess = compute_ess(chains);
  CHECK(ess > 0.8 * 4000.0);
  CHECK(ess < 1.25 * 4000.0);
}

TEST_CASE("strong positive autocorrelation slashes ESS") {
  Rng rng(33);
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < 4; ++c) {
    Eigen::VectorXd v(1000);
    double x = 0.0;
    const double rho = 0.95;
    for (int i = 0; i < 1000; ++i) {
      x = rho * x + std::sqrt(1.0 - rho * rho) * rng.normal();
      v[i] = x;
    }
    chains.push_back(v);
  }
  const double ess = compute_ess(chains);
  // AR(1) with rho=0.95 has ESS factor (1-rho)/(1+rho) ~ 1/39.
  CHECK(ess < 0.1 * 4000.0);
  CHECK(ess > 10.0);
}

TEST_CASE("diagnose summarizes every column with quantiles and counts") {
  Rng rng(55);
  std::vector<Eigen::MatrixXd> chains;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd m(200, 2);
    for (int i = 0; i < 200; ++i) {
      m(i, 0) = rng.normal(1.0, 0.5);
      m(i, 1) = rng.normal(-2.0, 2.0);
    }
    chains.push_back(m);
  }
  DiagnosticsReport rep = diagnose(chains, {"a", "b"}, 3);
  REQUIRE(rep.names.size() == 2);
  CHECK(rep.divergences == 3);
  CHECK(rep.n_chains == 3);
  CHECK(rep.n_iter == 200);
  CHECK(rep.rhat[0] < 1.05);
  CHECK(std::abs(rep.mean[0] - 1.0) < 0.1);
  CHECK(std::abs(rep.mean[1] + 2.0) < 0.4);
  CHECK(rep.q5[0] < rep.q25[0]);
  CHECK(rep.q25[0] < rep.q50[0]);
  CHECK(rep.q50[0] < rep.q75[0]);
  CHECK(rep.q75[0] < rep.q95[0]);
  CHECK(rep.converged());

  SUBCASE("csv export carries one row per parameter") {
    test::TempDir dir("diag_csv");
    write_diagnostics_csv(rep, dir.file("d.csv"));
    std::ifstream in(dir.file("d.csv"));
    std::string header, r1, r2, extra;
    REQUIRE(std::getline(in, header));
    CHECK(header.find("rhat") != std::string::npos);
    CHECK(header.find("ess") != std::string::npos);
    REQUIRE(std::getline(in, r1));
    REQUIRE(std::getline(in, r2));
    CHECK(r1.substr(0, 2) == "a,");
    CHECK(r2.substr(0, 2) == "b,");
    CHECK_FALSE(std::getline(in, extra));
  }
}

TEST_CASE("convergence flag tolerates pinned parameters but not drift") {
  std::vector<Eigen::MatrixXd> chains;
  Rng rng(66);
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(100, 2);
    for (int i = 0; i < 100; ++i) {
      m(i, 0) = rng.normal(0.0, 1.0);
      m(i, 1) = 7.0;  // a parameter the model pins to a constant
    }
    chains.push_back(m);
  }
  DiagnosticsReport rep = diagnose(chains, {"free", "pinned"}, 0);
  CHECK(std::isnan(rep.rhat[1]));
  CHECK(rep.sd[1] <= 1e-12);
  // NaN from a genuinely constant column does not block convergence.
  CHECK(rep.converged());

  // But NaN caused by a stuck-vs-moving mismatch does.
  std::vector<Eigen::MatrixXd> bad = chains;
  for (int i = 0; i < 100; ++i) bad[1](i, 1) = 9.0;  // chains disagree
  DiagnosticsReport rep2 = diagnose(bad, {"free", "pinned"}, 0);
  CHECK_FALSE(rep2.converged());
}
