#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "glyco/preprocess.hpp"
#include "glyco/rng.hpp"

using namespace glyco;

namespace {

PatientRecord two_point_record() {
  PatientRecord r;
  r.id = "p";
  r.static_features = {60, 80, 1};
  r.horizon_hours = 24.0;
  r.events = {{10.0, EventKind::glucose, 6.0}, {12.0, EventKind::glucose, 8.0}};
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("linear interpolation at the midpoint hour") {
  Grid g = resample_hourly(two_point_record());
  CHECK(g.T() == 24);
  CHECK(g.outcomes(0, 11) == doctest::Approx(7.0));
  CHECK_FALSE(g.measured(0, 11));
  CHECK(g.outcomes(0, 10) == doctest::Approx(6.0));
  CHECK(g.measured(0, 10));
  CHECK(g.measured(0, 12));
  // constant extrapolation at the ends, masked false
  CHECK(g.outcomes(0, 0) == doctest::Approx(6.0));
  CHECK_FALSE(g.measured(0, 0));
  CHECK(g.outcomes(0, 23) == doctest::Approx(8.0));
}

TEST_CASE("doses sum into their hour bin") {
  PatientRecord r = two_point_record();
  r.events.push_back({12.2, EventKind::bolus, 4.0});
  r.events.push_back({12.8, EventKind::bolus, 3.0});
  std::sort(r.events.begin(), r.events.end(),
            [](const Event& a, const Event& b) { return a.time_hours < b.time_hours; });
  Grid g = resample_hourly(r);
  CHECK(g.treatments(kBolus, 12) == 7.0);
  CHECK(g.treatments(kBolus, 11) == 0.0);
  // empty hour: zero treatments and carbs, mask false
  CHECK(g.treatments(kBasal, 5) == 0.0);
  CHECK(g.covariates(0, 5) == 0.0);
  CHECK_FALSE(g.measured(0, 5));
}

TEST_CASE("too few glucose events is an error") {
  PatientRecord r = two_point_record();
  r.events.pop_back();
  CHECK_THROWS(resample_hourly(r));
}

TEST_CASE("fit_scaler on {4, 6}") {
  PatientRecord r = two_point_record();
  r.events[0].value = 4.0;
  r.events[1].value = 6.0;
  Grid g = resample_hourly(r);
  ScalerParams s = fit_scaler({g});
  CHECK(s.outcome_mean == doctest::Approx(5.0));
  CHECK(s.outcome_sd == doctest::Approx(1.0));
  CHECK(s.scale_outcome(4.0) == doctest::Approx(-1.0));
  CHECK(s.scale_outcome(6.0) == doctest::Approx(1.0));
  // all-zero bolus channel falls back to sd 1 and zeros stay zero
  CHECK(s.treatment_sd[kBolus] == 1.0);
  CHECK(s.scale_treatment(kBolus, 0.0) == 0.0);
}

TEST_CASE("scaling never shifts treatment zeros") {
  PatientRecord r = two_point_record();
  r.events.push_back({8.3, EventKind::bolus, 6.0});
  std::sort(r.events.begin(), r.events.end(),
            [](const Event& a, const Event& b) { return a.time_hours < b.time_hours; });
  Grid g = resample_hourly(r);
  ScalerParams s = fit_scaler({g});
  Grid scaled = apply_scaler(g, s);
  for (int t = 0; t < g.T(); ++t)
    if (g.treatments(kBolus, t) == 0.0) CHECK(scaled.treatments(kBolus, t) == 0.0);
}

TEST_CASE("apply then invert is the identity to 1e-12") {
  Rng rng(3);
  Grid g = resample_hourly(two_point_record());
  for (int t = 0; t < g.T(); ++t) {
    g.outcomes(0, t) = 5 + 3 * rng.uniform01();
    g.treatments(0, t) = double(rng.uniform_int(0, 12));
    g.treatments(1, t) = double(rng.uniform_int(0, 20));
    g.covariates(0, t) = double(rng.uniform_int(0, 70));
  }
  ScalerParams s = fit_scaler({g});
  Grid back = invert_scaler(apply_scaler(g, s), s);
  for (int t = 0; t < g.T(); ++t) {
    CHECK(std::fabs(back.outcomes(0, t) - g.outcomes(0, t)) < 1e-12);
    CHECK(std::fabs(back.treatments(0, t) - g.treatments(0, t)) < 1e-12);
    CHECK(std::fabs(back.covariates(0, t) - g.covariates(0, t)) < 1e-12);
  }
  // identity scaler changes nothing
  ScalerParams id;
  Grid same = apply_scaler(g, id);
  CHECK(same.outcomes(0, 3) == g.outcomes(0, 3));
}

TEST_CASE("scaled measured outcomes have mean 0 and sd 1") {
  Rng rng(4);
  std::vector<Grid> grids;
  for (int i = 0; i < 5; ++i) {
    PatientRecord r = two_point_record();
    r.events.clear();
    for (int k = 0; k < 8; ++k)
      r.events.push_back({k * 3.0 + 0.5, EventKind::glucose,
                          6.0 + 4.0 * rng.uniform01()});
    grids.push_back(resample_hourly(r));
  }
  ScalerParams s = fit_scaler(grids);
  double sum = 0, sum2 = 0;
  long n = 0;
  for (const Grid& g : grids) {
    Grid sg = apply_scaler(g, s);
    for (int t = 0; t < g.T(); ++t)
      if (g.measured(0, t)) {
        sum += sg.outcomes(0, t);
        sum2 += sg.outcomes(0, t) * sg.outcomes(0, t);
        ++n;
      }
  }
  double mean = sum / double(n);
  double sd = std::sqrt(sum2 / double(n) - mean * mean);
  CHECK(std::fabs(mean) < 1e-9);
  CHECK(std::fabs(sd - 1.0) < 1e-9);
}

TEST_CASE("raw glucose 7 with mean 8 sd 2 scales to -0.5") {
  ScalerParams s;
  s.outcome_mean = 8.0;
  s.outcome_sd = 2.0;
  CHECK(s.scale_outcome(7.0) == doctest::Approx(-0.5));
}

TEST_CASE("dataset container round trips and is byte-stable") {
  Rng rng(5);
  std::vector<PatientRecord> recs;
  for (int i = 0; i < 3; ++i) {
    PatientRecord r = two_point_record();
    r.id = "p" + std::to_string(i);
    r.events.push_back({6.1, EventKind::basal, 10.0});
    r.events.push_back({12.4, EventKind::carbs, 42.0});
    std::sort(r.events.begin(), r.events.end(),
              [](const Event& a, const Event& b) { return a.time_hours < b.time_hours; });
    recs.push_back(r);
  }
  Dataset ds = preprocess_records(recs);
  std::string path = "test_dataset.bin";
  write_dataset(path, ds);
  Dataset back = read_dataset(path);
  REQUIRE(back.grids.size() == ds.grids.size());
  for (std::size_t i = 0; i < ds.grids.size(); ++i) {
    const Grid& a = ds.grids[i];
    const Grid& b = back.grids[i];
    CHECK(a.patient_id == b.patient_id);
    CHECK(a.static_features == b.static_features);
    for (int t = 0; t < a.T(); ++t) {
      CHECK(a.outcomes(0, t) == b.outcomes(0, t));
      CHECK(a.treatments(0, t) == b.treatments(0, t));
      CHECK(a.treatments(1, t) == b.treatments(1, t));
      CHECK(a.covariates(0, t) == b.covariates(0, t));
      CHECK(a.measured(0, t) == b.measured(0, t));
      CHECK(a.hours_of_day[std::size_t(t)] == b.hours_of_day[std::size_t(t)]);
    }
  }
  CHECK(back.scaler.outcome_mean == ds.scaler.outcome_mean);
  std::string first = slurp(path);
  write_dataset(path, ds);
  CHECK(slurp(path) == first);
  std::remove(path.c_str());
}
