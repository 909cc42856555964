#include "chmm/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "chmm/errors.hpp"

namespace chmm {

int PanelDataset::total_rows() const {
  int n = 0;
  for (const auto& p : patients) n += p.T();
  return n;
}

int PanelDataset::covariate_index(const std::string& name) const {
  for (int i = 0; i < n_covariates(); ++i)
    if (covariate_names[i] == name) return i;
  throw ValidationError("unknown covariate '" + name + "'");
}

void PanelDataset::validate() const {
  const int p = n_covariates();
  for (const auto& pat : patients) {
    if (pat.T() < 2)
      throw ValidationError("patient " + pat.id + " has T=" +
                            std::to_string(pat.T()) + ", need at least 2");
    if (pat.y_b.size() != pat.T() || pat.x.rows() != pat.T() ||
        pat.x.cols() != p)
      throw ValidationError("patient " + pat.id +
                            " has inconsistent series shapes");
    for (int t = 0; t < pat.T(); ++t) {
      if (!std::isfinite(pat.y_a[t]) || !std::isfinite(pat.y_b[t]))
        throw ValidationError("patient " + pat.id +
                              " has a non-finite observation at t=" +
                              std::to_string(t + 1));
    }
    if (!pat.x.allFinite())
      throw ValidationError("patient " + pat.id +
                            " has a non-finite covariate value");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, int line_no, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw LoadError("line " + std::to_string(line_no) + ": cannot parse '" +
                    s + "' in column " + col);
  }
}

struct RawRow {
  int t;
  double y_a, y_b;
  std::vector<double> x;
};

}  // namespace

PanelDataset load_panel(const std::string& path,
                        const std::vector<std::string>& log_columns) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open panel file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty panel file: " + path);
  auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "patient_id" || header[1] != "t" ||
      header[2] != "y_a" || header[3] != "y_b")
    throw LoadError("panel header must start with patient_id,t,y_a,y_b");

  PanelDataset data;
  data.meta = path;
  data.covariate_names.assign(header.begin() + 4, header.end());
  const int p = data.n_covariates();

  bool log_a = false, log_b = false;
  for (const auto& c : log_columns) {
    if (c == "y_a")
      log_a = true;
    else if (c == "y_b")
      log_b = true;
    else
      throw ValidationError("log transform flag for unknown column '" + c +
                            "'");
  }

  // Rows grouped per patient in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<RawRow>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != 4 + p)
      throw LoadError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(4 + p) + " fields, got " +
                      std::to_string(fields.size()));
    RawRow r;
    const std::string& id = fields[0];
    double traw = parse_double(fields[1], line_no, "t");
    r.t = static_cast<int>(traw);
    if (static_cast<double>(r.t) != traw || r.t < 1)
      throw LoadError("line " + std::to_string(line_no) +
                      ": time index must be a positive integer, got '" +
                      fields[1] + "'");
    r.y_a = parse_double(fields[2], line_no, "y_a");
    r.y_b = parse_double(fields[3], line_no, "y_b");
    if (log_a) {
      if (r.y_a <= 0.0)
        throw LoadError("line " + std::to_string(line_no) +
                        ": y_a must be positive to log-transform");
      r.y_a = std::log(r.y_a);
    }
    if (log_b) {
      if (r.y_b <= 0.0)
        throw LoadError("line " + std::to_string(line_no) +
                        ": y_b must be positive to log-transform");
      r.y_b = std::log(r.y_b);
    }
    if (!std::isfinite(r.y_a) || !std::isfinite(r.y_b))
      throw LoadError("line " + std::to_string(line_no) +
                      ": non-finite observation for patient " + id);
    r.x.resize(p);
    for (int c = 0; c < p; ++c) {
      r.x[c] = parse_double(fields[4 + c], line_no, data.covariate_names[c]);
      if (!std::isfinite(r.x[c]))
        throw LoadError("line " + std::to_string(line_no) +
                        ": non-finite covariate " + data.covariate_names[c] +
                        " for patient " + id);
    }
    if (rows.find(id) == rows.end()) order.push_back(id);
    rows[id].push_back(r);
  }

  for (const auto& id : order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(),
                     [](const RawRow& a, const RawRow& b) { return a.t < b.t; });
    const int T = static_cast<int>(rs.size());
    if (T < 2)
      throw LoadError("patient " + id + " has only " + std::to_string(T) +
                      " row(s), need at least 2");
    PatientSeries pat;
    pat.id = id;
    pat.y_a.resize(T);
    pat.y_b.resize(T);
    pat.x.resize(T, p);
    for (int t = 0; t < T; ++t) {
      if (rs[t].t != t + 1)
        throw LoadError("patient " + id +
                        " has a non-contiguous time index: expected t=" +
                        std::to_string(t + 1) + ", found t=" +
                        std::to_string(rs[t].t));
      pat.y_a[t] = rs[t].y_a;
      pat.y_b[t] = rs[t].y_b;
      for (int c = 0; c < p; ++c) pat.x(t, c) = rs[t].x[c];
    }
    data.patients.push_back(std::move(pat));
  }

  data.validate();
  return data;
}

namespace {

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_panel(const PanelDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write panel file: " + path);
  out << "patient_id,t,y_a,y_b";
  for (const auto& n : data.covariate_names) out << "," << n;
  out << "\n";
  for (const auto& pat : data.patients) {
    for (int t = 0; t < pat.T(); ++t) {
      out << pat.id << "," << (t + 1) << "," << format_full(pat.y_a[t]) << ","
          << format_full(pat.y_b[t]);
      for (int c = 0; c < data.n_covariates(); ++c)
        out << "," << format_full(pat.x(t, c));
      out << "\n";
    }
  }
}

PanelDataset center_within(const PanelDataset& data, const std::string& var) {
  const int idx = data.covariate_index(var);
  PanelDataset out = data;
  out.covariate_names.push_back(var + "_centered");
  for (auto& pat : out.patients) {
    const double mean = pat.x.col(idx).mean();
    Eigen::MatrixXd x(pat.T(), pat.x.cols() + 1);
    x.leftCols(pat.x.cols()) = pat.x;
    x.col(pat.x.cols()) = pat.x.col(idx).array() - mean;
    pat.x = std::move(x);
  }
  return out;
}

PanelDataset lag_covariate(const PanelDataset& data, const std::string& var,
                           int lag) {
  if (lag < 1) throw ValidationError("lag must be >= 1");
  const int idx = data.covariate_index(var);
  PanelDataset out = data;
  out.covariate_names.push_back(var + "_lag" + std::to_string(lag));
  for (auto& pat : out.patients) {
    Eigen::MatrixXd x(pat.T(), pat.x.cols() + 1);
    x.leftCols(pat.x.cols()) = pat.x;
    for (int t = 0; t < pat.T(); ++t)
      x(t, pat.x.cols()) = (t >= lag) ? pat.x(t - lag, idx) : 0.0;
    pat.x = std::move(x);
  }
  return out;
}

PanelDataset select_covariates(const PanelDataset& data,
                               const std::vector<std::string>& names) {
  std::vector<int> idx;
  idx.reserve(names.size());
  for (const auto& n : names) idx.push_back(data.covariate_index(n));
  PanelDataset out;
  out.meta = data.meta;
  out.covariate_names = names;
  out.patients.reserve(data.patients.size());
  for (const auto& pat : data.patients) {
    PatientSeries sel;
    sel.id = pat.id;
    sel.y_a = pat.y_a;
    sel.y_b = pat.y_b;
    sel.x.resize(pat.T(), static_cast<int>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c)
      sel.x.col(static_cast<int>(c)) = pat.x.col(idx[c]);
    out.patients.push_back(std::move(sel));
  }
  return out;
}

}  // namespace chmm
