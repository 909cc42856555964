#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chmm/panel.hpp"
#include "chmm/parameters.hpp"

namespace chmm {

// Most probable global-state path, log-space dynamic program; ties resolve
// toward the lower state index at every argmax.
std::vector<int> viterbi(const Parameters& params,
                         const PatientSeries& patient);

// Enumeration oracle with the same tie rule; refuses T > 8.
std::vector<int> brute_force_viterbi(const Parameters& params,
                                     const PatientSeries& patient);

// Writes `patient_id,t,state_a,state_b,global` (1-based state labels).
void write_decode_csv(const Parameters& params, const PanelDataset& data,
                      const std::string& path);

struct PpcResult {
  double coverage50 = 0.0;
  double coverage90 = 0.0;
  int n_observations = 0;  // patient-time-channel triples scored
  // One row per (patient, t, channel): observation plus replicate quantiles.
  struct Row {
    std::string patient_id;
    int t = 0;
    char channel = 'a';
    double observed = 0.0;
    double q5, q25, q50, q75, q95;
  };
  std::vector<Row> rows;
};

// Replicates data from posterior draws conditioned on each draw's decoded
// state path, then scores central-interval coverage of the observations.
PpcResult posterior_predictive(const std::vector<Parameters>& draws,
                               const PanelDataset& data, int n_rep,
                               std::uint64_t seed);

void write_ppc_csv(const PpcResult& ppc, const std::string& path);

struct TransitionSummary {
  int from = 0, to = 0;  // 0-based global states
  double mean = 0.0;
  double q5, q25, q50, q75, q95;
};

// Posterior of each requested transition probability at a fixed covariate
// profile. Empty pairs means all ordered pairs.
std::vector<TransitionSummary> conditional_transition_summary(
    const std::vector<Parameters>& draws, const Eigen::VectorXd& profile,
    const std::vector<std::pair<int, int>>& pairs = {});

void write_transition_summary_csv(const std::vector<TransitionSummary>& rows,
                                  const std::string& path);

struct SpilloverSpec {
  Eigen::VectorXd profile;     // model-covariate values, raw (reported) scale
  int treatment_index = -1;    // contemporaneous treatment column
  int treatment_lag_index = -1;  // lag-1 column; -1 if the model has none
  double treated_value = 0.5;
  double untreated_value = -0.5;
  std::array<int, 3> path{3, 1, 0};  // 0-based global states, g0 -> g1 -> g2
};

struct SpilloverReport {
  // Rows: xi(z), xi(z'), difference, quotient; columns 5/25/50/75/95%.
  Eigen::Matrix<double, 4, 5> quantiles;
  std::array<int, 3> path;
  Eigen::VectorXd profile;
  int n_draws = 0;
  int n_quotient_overflow = 0;  // draws with xi(z') at machine zero
  bool overflow_warning = false;  // set when > 1% of draws overflowed
};

// Two-step path probability under treatment vs no treatment, per draw:
// the first transition carries the contemporaneous treatment value, the
// second carries it through the lag-1 column. Quantiles are over draws.
SpilloverReport spillover(const std::vector<Parameters>& draws,
                          const SpilloverSpec& spec);

void write_spillover_csv(const SpilloverReport& report,
                         const std::string& path);

}  // namespace chmm
