#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace chmm {

// One patient's series: two observation channels on the log scale plus a
// T x p covariate matrix, with contiguous time indices 1..T.
struct PatientSeries {
  std::string id;
  Eigen::VectorXd y_a;
  Eigen::VectorXd y_b;
  Eigen::MatrixXd x;  // T x p

  int T() const { return static_cast<int>(y_a.size()); }
};

struct PanelDataset {
  std::vector<PatientSeries> patients;
  std::vector<std::string> covariate_names;
  std::string meta;  // where the panel came from: source file or simulation seed

  int n_patients() const { return static_cast<int>(patients.size()); }
  int n_covariates() const { return static_cast<int>(covariate_names.size()); }
  int total_rows() const;

  // Index of a covariate column; throws ValidationError if absent.
  int covariate_index(const std::string& name) const;

  // Checks series lengths (T >= 2), finite observations, covariate shape.
  void validate() const;
};

// Reads `patient_id,t,y_a,y_b,<covariate...>`. Rows are grouped by patient
// in order of first appearance and must have time indices 1..T contiguous.
// Columns listed in log_columns ("y_a"/"y_b") are log-transformed on load.
PanelDataset load_panel(const std::string& path,
                        const std::vector<std::string>& log_columns = {});

// Inverse of load_panel (without the log transform); full precision so the
// round-trip is exact.
void write_panel(const PanelDataset& data, const std::string& path);

// Adds `<var>_centered` = var minus the patient-specific mean.
PanelDataset center_within(const PanelDataset& data, const std::string& var);

// Adds `<var>_lag<lag>`; the first `lag` entries of each patient are 0.
PanelDataset lag_covariate(const PanelDataset& data, const std::string& var,
                           int lag);

// Restricts and reorders covariate columns to `names`; used to select the
// model covariates after derivation steps.
PanelDataset select_covariates(const PanelDataset& data,
                               const std::vector<std::string>& names);

}  // namespace chmm
