#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace chmm {

// Linear-interpolation quantile (the convention of most statistics tools) on
// an unsorted copy of the data; prob in [0,1].
inline double quantile(std::vector<double> v, double prob) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline double quantile(const Eigen::Ref<const Eigen::VectorXd>& v,
                       double prob) {
  return quantile(std::vector<double>(v.data(), v.data() + v.size()), prob);
}

inline double log_sum_exp_vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double log_mean_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return log_sum_exp_vec(v) - std::log(static_cast<double>(v.size()));
}

inline double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double n = static_cast<double>(v.size());
  if (n < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / (n - 1.0);
}

}  // namespace chmm
