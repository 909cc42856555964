#include <cmath>
#include <fstream>

#include "chmm/errors.hpp"
#include "chmm/panel.hpp"
#include "chmm/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace chmm;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Three patients, four steps each, one covariate.
const char* kToyCsv =
    "patient_id,t,y_a,y_b,treat\n"
    "p1,1,4.5,2.9,0\n"
    "p1,2,4.6,3.0,1\n"
    "p1,3,4.7,3.1,1\n"
    "p1,4,4.6,3.0,0\n"
    "p2,1,4.4,2.8,1\n"
    "p2,2,4.5,2.9,0\n"
    "p2,3,4.6,3.0,0\n"
    "p2,4,4.7,3.1,1\n"
    "p3,1,4.5,2.9,0\n"
    "p3,2,4.5,2.9,0\n"
    "p3,3,4.6,3.0,1\n"
    "p3,4,4.6,3.0,1\n";

}  // namespace

TEST_CASE("toy CSV loads with the right patient and row counts") {
  test::TempDir dir("panel_toy");
  write_text(dir.file("toy.csv"), kToyCsv);
  PanelDataset data = load_panel(dir.file("toy.csv"));
  CHECK(data.n_patients() == 3);
  CHECK(data.total_rows() == 12);
  CHECK(data.covariate_names == std::vector<std::string>{"treat"});
  CHECK(data.patients[0].id == "p1");
  CHECK(data.patients[0].T() == 4);
  CHECK(data.patients[1].y_a[0] == doctest::Approx(4.4));
  CHECK(data.patients[2].x(2, 0) == doctest::Approx(1.0));
  CHECK_NOTHROW(data.validate());
}

TEST_CASE("log-flagged columns are log-transformed on load") {
  test::TempDir dir("panel_log");
  write_text(dir.file("raw.csv"),
             "patient_id,t,y_a,y_b\n"
             "p1,1,94.63,17.46\n"
             "p1,2,110.0,30.9\n");
  PanelDataset data = load_panel(dir.file("raw.csv"), {"y_a", "y_b"});
  // Raw 94.63 stores as its log, which is the 4.55 log-scale mean.
  CHECK(data.patients[0].y_a[0] == doctest::Approx(4.55).epsilon(1e-4));
  CHECK(data.patients[0].y_a[0] ==
        doctest::Approx(4.549974550520141).epsilon(1e-14));
  CHECK(data.patients[0].y_b[1] == doctest::Approx(std::log(30.9)));

  // Only y_a / y_b are valid log-column names.
  CHECK_THROWS_AS(load_panel(dir.file("raw.csv"), {"treat"}), ValidationError);
}

TEST_CASE("loader rejects malformed panels with descriptive errors") {
  test::TempDir dir("panel_bad");

  SUBCASE("gap in the time index names the patient") {
    write_text(dir.file("gap.csv"),
               "patient_id,t,y_a,y_b\n"
               "p7,1,4.5,2.9\n"
               "p7,3,4.6,3.0\n");
    CHECK_THROWS_WITH_AS(load_panel(dir.file("gap.csv")),
                         doctest::Contains("p7"), LoadError);
  }
  SUBCASE("time must start at 1") {
    write_text(dir.file("start.csv"),
               "patient_id,t,y_a,y_b\n"
               "p1,2,4.5,2.9\n"
               "p1,3,4.6,3.0\n");
    CHECK_THROWS_AS(load_panel(dir.file("start.csv")), LoadError);
  }
  SUBCASE("a single-step patient is rejected") {
    write_text(dir.file("short.csv"),
               "patient_id,t,y_a,y_b\n"
               "p1,1,4.5,2.9\n"
               "p2,1,4.4,2.8\n"
               "p2,2,4.5,2.9\n");
    CHECK_THROWS_WITH_AS(load_panel(dir.file("short.csv")),
                         doctest::Contains("p1"), LoadError);
  }
  SUBCASE("non-finite observation is rejected with its location") {
    write_text(dir.file("nan.csv"),
               "patient_id,t,y_a,y_b\n"
               "p1,1,4.5,2.9\n"
               "p1,2,nan,3.0\n");
    CHECK_THROWS_AS(load_panel(dir.file("nan.csv")), LoadError);
  }
  SUBCASE("missing required column") {
    write_text(dir.file("cols.csv"),
               "patient_id,t,y_a\n"
               "p1,1,4.5\n"
               "p1,2,4.6\n");
    CHECK_THROWS_AS(load_panel(dir.file("cols.csv")), LoadError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_panel(dir.file("absent.csv")), LoadError);
  }
}

TEST_CASE("center_within subtracts the patient-specific mean") {
  test::TempDir dir("panel_center");
  write_text(dir.file("toy.csv"), kToyCsv);
  PanelDataset data = load_panel(dir.file("toy.csv"));
  PanelDataset centered = center_within(data, "treat");

  CHECK(centered.covariate_names ==
        std::vector<std::string>{"treat", "treat_centered"});
  const int c = centered.covariate_index("treat_centered");

  // p1 treat = (0,1,1,0): mean 1/2 -> centered (-1/2, 1/2, 1/2, -1/2).
  CHECK(centered.patients[0].x(0, c) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(centered.patients[0].x(1, c) == doctest::Approx(0.5).epsilon(1e-14));

  // The worked three-step case: values (0,1,1) center to (-2/3,1/3,1/3).
  PanelDataset tri;
  tri.covariate_names = {"v"};
  PatientSeries pat;
  pat.id = "q";
  pat.y_a.setConstant(3, 4.5);
  pat.y_b.setConstant(3, 3.0);
  pat.x.resize(3, 1);
  pat.x << 0.0, 1.0, 1.0;
  tri.patients.push_back(pat);
  PanelDataset tric = center_within(tri, "v");
  CHECK(tric.patients[0].x(0, 1) == doctest::Approx(-2.0 / 3.0).epsilon(1e-14));
  CHECK(tric.patients[0].x(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(tric.patients[0].x(2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  SUBCASE("per-patient means of every centered column vanish") {
    for (const auto& p : centered.patients) {
      CHECK(std::abs(p.x.col(c).mean()) < 1e-12);
    }
  }
  SUBCASE("constant-zero column centers to all zeros") {
    PanelDataset z = tri;
    z.patients[0].x.setZero();
    PanelDataset zc = center_within(z, "v");
    CHECK(zc.patients[0].x.col(1).isZero(0.0));
  }
  SUBCASE("unknown covariate name is rejected") {
    CHECK_THROWS_AS(center_within(data, "nope"), ValidationError);
  }
}

TEST_CASE("lag_covariate shifts forward and zero-fills the horizon") {
  PanelDataset data;
  data.covariate_names = {"v"};
  PatientSeries pat;
  pat.id = "q";
  pat.y_a.setConstant(3, 4.5);
  pat.y_b.setConstant(3, 3.0);
  pat.x.resize(3, 1);
  pat.x << 7.0, 8.0, 9.0;
  data.patients.push_back(pat);

  PanelDataset lagged = lag_covariate(data, "v", 1);
  CHECK(lagged.covariate_names ==
        std::vector<std::string>{"v", "v_lag1"});
  CHECK(lagged.patients[0].x(0, 1) == 0.0);
  CHECK(lagged.patients[0].x(1, 1) == 7.0);
  CHECK(lagged.patients[0].x(2, 1) == 8.0);

  SUBCASE("lag at least T zeroes the whole column") {
    PanelDataset l3 = lag_covariate(data, "v", 3);
    CHECK(l3.patients[0].x.col(1).isZero(0.0));
  }
  SUBCASE("unknown name is rejected") {
    CHECK_THROWS_AS(lag_covariate(data, "w", 1), ValidationError);
  }
}

TEST_CASE("center-then-lag and lag-then-center genuinely differ") {
  // Fixture series (1,2,6). Center first: mean 3 -> (-2,-1,3), lag -> (0,-2,-1).
  // Lag first: (0,1,2), center: mean 1 -> (-1,0,1). The pipeline order is
  // center-then-lag; this pins the divergence so a silent reorder fails.
  PanelDataset data;
  data.covariate_names = {"v"};
  PatientSeries pat;
  pat.id = "q";
  pat.y_a.setConstant(3, 4.5);
  pat.y_b.setConstant(3, 3.0);
  pat.x.resize(3, 1);
  pat.x << 1.0, 2.0, 6.0;
  data.patients.push_back(pat);

  PanelDataset center_lag =
      lag_covariate(center_within(data, "v"), "v_centered", 1);
  const int cl = center_lag.covariate_index("v_centered_lag1");
  CHECK(center_lag.patients[0].x(0, cl) == doctest::Approx(0.0));
  CHECK(center_lag.patients[0].x(1, cl) == doctest::Approx(-2.0));
  CHECK(center_lag.patients[0].x(2, cl) == doctest::Approx(-1.0));

  PanelDataset lag_center =
      center_within(lag_covariate(data, "v", 1), "v_lag1");
  const int lc = lag_center.covariate_index("v_lag1_centered");
  CHECK(lag_center.patients[0].x(0, lc) == doctest::Approx(-1.0));
  CHECK(lag_center.patients[0].x(1, lc) == doctest::Approx(0.0));
  CHECK(lag_center.patients[0].x(2, lc) == doctest::Approx(1.0));

  for (int t = 0; t < 3; ++t) {
    CHECK(center_lag.patients[0].x(t, cl) !=
          lag_center.patients[0].x(t, lc));
  }
}

TEST_CASE("panel CSV round-trip is exact") {
  Rng rng(4242);
  PanelDataset data;
  data.covariate_names = {"age", "treat"};
  for (int i = 0; i < 5; ++i) {
    PatientSeries pat;
    pat.id = "pt" + std::to_string(i);
    const int T = rng.uniform_int(2, 6);
    pat.y_a.resize(T);
    pat.y_b.resize(T);
    pat.x.resize(T, 2);
    for (int t = 0; t < T; ++t) {
      pat.y_a[t] = rng.normal(4.6, 0.1);
      pat.y_b[t] = rng.normal(3.0, 0.3);
      pat.x(t, 0) = rng.normal(60.0, 8.0);
      pat.x(t, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    data.patients.push_back(pat);
  }
  test::TempDir dir("panel_rt");
  write_panel(data, dir.file("out.csv"));
  PanelDataset back = load_panel(dir.file("out.csv"));
  REQUIRE(back.n_patients() == data.n_patients());
  CHECK(back.covariate_names == data.covariate_names);
  for (int i = 0; i < data.n_patients(); ++i) {
    CHECK(back.patients[i].id == data.patients[i].id);
    CHECK(back.patients[i].y_a == data.patients[i].y_a);
    CHECK(back.patients[i].y_b == data.patients[i].y_b);
    CHECK(back.patients[i].x == data.patients[i].x);
  }
}

TEST_CASE("select_covariates restricts and reorders the design columns") {
  test::TempDir dir("panel_sel");
  write_text(dir.file("toy.csv"), kToyCsv);
  PanelDataset data = center_within(load_panel(dir.file("toy.csv")), "treat");
  PanelDataset sel = select_covariates(data, {"treat_centered"});
  CHECK(sel.covariate_names == std::vector<std::string>{"treat_centered"});
  CHECK(sel.patients[0].x.cols() == 1);
  CHECK(sel.patients[0].x(0, 0) == doctest::Approx(-0.5));
  CHECK_THROWS_AS(select_covariates(data, {"ghost"}), ValidationError);
}

TEST_CASE("covariate_index reports unknown names") {
  PanelDataset data;
  data.covariate_names = {"a", "b"};
  CHECK(data.covariate_index("b") == 1);
  CHECK_THROWS_WITH_AS(data.covariate_index("zz"), doctest::Contains("zz"),
                       ValidationError);
}
