#include "chmm/parameters.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "chmm/errors.hpp"
#include "json.hpp"

namespace chmm {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

void check_increasing(const Eigen::VectorXd& v, const char* name) {
  for (int i = 0; i + 1 < v.size(); ++i) {
    require(v[i] < v[i + 1], std::string(name) +
                                 " must be strictly increasing, violated at "
                                 "index " +
                                 std::to_string(i));
  }
}

}  // namespace

void Parameters::validate() const {
  const int G = space.n_global();
  require(mu_a.size() == space.n_a, "mu_a has length " +
                                        std::to_string(mu_a.size()) +
                                        ", expected " +
                                        std::to_string(space.n_a));
  require(mu_b.size() == space.n_b, "mu_b has length " +
                                        std::to_string(mu_b.size()) +
                                        ", expected " +
                                        std::to_string(space.n_b));
  check_increasing(mu_a, "mu_a");
  check_increasing(mu_b, "mu_b");
  require(std::isfinite(sigma_a) && sigma_a > 0.0, "sigma_a must be > 0");
  require(std::isfinite(sigma_b) && sigma_b > 0.0, "sigma_b must be > 0");
  require(pi.size() == G, "pi has length " + std::to_string(pi.size()) +
                              ", expected " + std::to_string(G));
  double pi_sum = 0.0;
  for (int g = 0; g < G; ++g) {
    require(std::isfinite(pi[g]) && pi[g] >= 0.0,
            "pi[" + std::to_string(g) + "] must be finite and >= 0");
    pi_sum += pi[g];
  }
  require(std::abs(pi_sum - 1.0) <= 1e-12,
          "pi must sum to 1 within 1e-12, got " + std::to_string(pi_sum));
  require(alpha.rows() == G && alpha.cols() == G,
          "alpha must be " + std::to_string(G) + "x" + std::to_string(G));
  require(beta.rows() == G * G, "beta must have " + std::to_string(G * G) +
                                    " rows (one per ordered state pair)");
  for (int j = 0; j < G; ++j) {
    require(alpha(j, j) == 0.0,
            "alpha diagonal must be exactly 0 at state " + std::to_string(j));
    require(beta.row(j * G + j).isZero(0.0),
            "beta diagonal row must be exactly 0 at state " +
                std::to_string(j));
    for (int k = 0; k < G; ++k) {
      require(std::isfinite(alpha(j, k)), "alpha(" + std::to_string(j) + "," +
                                              std::to_string(k) +
                                              ") is not finite");
      require(beta.row(j * G + k).allFinite(),
              "beta row (" + std::to_string(j) + "," + std::to_string(k) +
                  ") has a non-finite entry");
    }
  }
}

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd json_to_vec(const json& a, const char* name) {
  if (!a.is_array()) throw LoadError(std::string(name) + " must be an array");
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw LoadError(std::string(name) + "[" + std::to_string(i) +
                      "] is not a number");
    v[static_cast<int>(i)] = a[i].get<double>();
  }
  return v;
}

}  // namespace

std::string Parameters::to_json_text() const {
  const int G = space.n_global();
  const int p = n_covariates();
  json j;
  j["n_a"] = space.n_a;
  j["n_b"] = space.n_b;
  j["mu_a"] = vec_to_json(mu_a);
  j["mu_b"] = vec_to_json(mu_b);
  j["sigma_a"] = sigma_a;
  j["sigma_b"] = sigma_b;
  j["pi"] = vec_to_json(pi);
  json ja = json::array();
  for (int r = 0; r < G; ++r) {
    json row = json::array();
    for (int c = 0; c < G; ++c) row.push_back(alpha(r, c));
    ja.push_back(row);
  }
  j["alpha"] = ja;
  json jb = json::array();
  for (int r = 0; r < G; ++r) {
    json row = json::array();
    for (int c = 0; c < G; ++c) {
      json cell = json::array();
      for (int q = 0; q < p; ++q) cell.push_back(beta(r * G + c, q));
      row.push_back(cell);
    }
    jb.push_back(row);
  }
  j["beta"] = jb;
  return j.dump(2);
}

Parameters Parameters::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw LoadError(std::string("parameter JSON parse failure: ") + e.what());
  }
  for (const char* key :
       {"n_a", "n_b", "mu_a", "mu_b", "sigma_a", "sigma_b", "pi", "alpha",
        "beta"}) {
    if (!j.contains(key))
      throw LoadError(std::string("parameter JSON missing field '") + key +
                      "'");
  }
  Parameters params;
  params.space = StateSpace(j["n_a"].get<int>(), j["n_b"].get<int>());
  const int G = params.space.n_global();
  params.mu_a = json_to_vec(j["mu_a"], "mu_a");
  params.mu_b = json_to_vec(j["mu_b"], "mu_b");
  params.sigma_a = j["sigma_a"].get<double>();
  params.sigma_b = j["sigma_b"].get<double>();
  params.pi = json_to_vec(j["pi"], "pi");
  const json& ja = j["alpha"];
  if (!ja.is_array() || static_cast<int>(ja.size()) != G)
    throw LoadError("alpha must be a " + std::to_string(G) + "x" +
                    std::to_string(G) + " nested array");
  params.alpha.resize(G, G);
  for (int r = 0; r < G; ++r) {
    if (static_cast<int>(ja[r].size()) != G)
      throw LoadError("alpha row " + std::to_string(r) + " has wrong length");
    for (int c = 0; c < G; ++c) params.alpha(r, c) = ja[r][c].get<double>();
  }
  const json& jb = j["beta"];
  if (!jb.is_array() || static_cast<int>(jb.size()) != G)
    throw LoadError("beta must be a [state][state][covariate] nested array");
  int p = -1;
  for (int r = 0; r < G; ++r) {
    if (static_cast<int>(jb[r].size()) != G)
      throw LoadError("beta row " + std::to_string(r) + " has wrong length");
    for (int c = 0; c < G; ++c) {
      const int pc = static_cast<int>(jb[r][c].size());
      if (p < 0) {
        p = pc;
        params.beta.resize(G * G, p);
      } else if (pc != p) {
        throw LoadError("beta entries have inconsistent covariate dimension");
      }
      for (int q = 0; q < p; ++q)
        params.beta(r * G + c, q) = jb[r][c][q].get<double>();
    }
  }
  if (p < 0) params.beta.resize(G * G, 0);
  params.validate();
  return params;
}

Parameters Parameters::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open parameter file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

void Parameters::save_json(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write parameter file: " + path);
  out << to_json_text() << "\n";
}

Parameters make_empty_parameters(const StateSpace& space, int p) {
  const int G = space.n_global();
  Parameters params;
  params.space = space;
  params.mu_a = Eigen::VectorXd::Zero(space.n_a);
  for (int i = 0; i < space.n_a; ++i) params.mu_a[i] = static_cast<double>(i);
  params.mu_b = Eigen::VectorXd::Zero(space.n_b);
  for (int i = 0; i < space.n_b; ++i) params.mu_b[i] = static_cast<double>(i);
  params.sigma_a = 1.0;
  params.sigma_b = 1.0;
  params.pi = Eigen::VectorXd::Constant(G, 1.0 / G);
  params.alpha = Eigen::MatrixXd::Zero(G, G);
  params.beta = Eigen::MatrixXd::Zero(G * G, p);
  return params;
}

}  // namespace chmm
