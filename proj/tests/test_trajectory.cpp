#include <doctest.h>

#include <sstream>

#include "glyco/trajectory.hpp"

using namespace glyco;

namespace {

Grid ramp_grid(int T) {
  Grid g;
  g.outcomes = Tensor(kOutcomeChannels, T);
  g.treatments = Tensor(kTreatmentChannels, T);
  g.covariates = Tensor(kCovariateChannels, T);
  g.outcome_mask.assign(std::size_t(T), 0);
  g.hours_of_day.resize(std::size_t(T));
  g.patient_id = "ramp";
  g.static_features = {60.0, 80.0, 1.0};
  for (int t = 0; t < T; ++t) {
    g.outcomes(0, t) = 5.0 + 0.1 * t;
    g.treatments(kBasal, t) = t % 24 == 7 ? 10.0 : 0.0;
    g.treatments(kBolus, t) = t % 24 == 12 ? 4.0 : 0.0;
    g.covariates(0, t) = t % 24 == 12 ? 50.0 : 0.0;
    g.outcome_mask[std::size_t(t)] = t % 5 == 0 ? 1 : 0;
    g.hours_of_day[std::size_t(t)] = t % 24;
  }
  return g;
}

}  // namespace

TEST_CASE("split_window partitions past and future") {
  Grid g = ramp_grid(48);
  Window w = split_window(g, 24, 24);
  CHECK(w.context.past_len() == 24);
  CHECK(w.horizon() == 24);
  CHECK(w.context.past_outcomes(0, 0) == 5.0);
  CHECK(w.future_outcomes(0, 0) == doctest::Approx(5.0 + 0.1 * 24));
  CHECK(w.context.t_split == 24);

  Window w2 = split_window(ramp_grid(25), 1, 24);
  CHECK(w2.context.past_len() == 1);
  CHECK(w2.horizon() == 24);

  CHECK_THROWS_AS(split_window(g, 30, 24), std::out_of_range);
  CHECK_THROWS_AS(split_window(g, 0, 24), std::out_of_range);
}

TEST_CASE("window round trip reproduces the grid slice") {
  Grid g = ramp_grid(40);
  Window w = split_window(g, 13, 20);
  for (int t = 0; t < 13; ++t)
    CHECK(w.context.past_outcomes(0, t) == g.outcomes(0, t));
  for (int k = 0; k < 20; ++k) {
    CHECK(w.future_outcomes(0, k) == g.outcomes(0, 13 + k));
    for (int d = 0; d < kTreatmentChannels; ++d)
      CHECK(w.future_treatments(d, k) == g.treatments(d, 13 + k));
    CHECK(w.context.future_covariates(0, k) == g.covariates(0, 13 + k));
    CHECK(w.future_measured(0, k) == g.measured(0, 13 + k));
    CHECK(w.context.future_hours[std::size_t(k)] ==
          g.hours_of_day[std::size_t(13 + k)]);
  }
}

TEST_CASE("moving_windows counts") {
  CHECK(moving_windows(ramp_grid(26), 24, 1).size() == 2);
  CHECK(moving_windows(ramp_grid(48), 24, 24).size() == 1);
  CHECK(moving_windows(ramp_grid(24), 24, 1).empty());
  // stride 1 gives exactly T - K windows and covers every future index
  Grid g = ramp_grid(30);
  auto ws = moving_windows(g, 24, 1);
  CHECK(int(ws.size()) == 30 - 24);
  std::vector<bool> covered(30, false);
  for (const Window& w : ws)
    for (int k = 0; k < w.horizon(); ++k)
      covered[std::size_t(w.context.t_split + k)] = true;
  for (int t = 1; t < 30; ++t) CHECK(covered[std::size_t(t)]);
}

TEST_CASE("patient record jsonl round trip") {
  PatientRecord r;
  r.id = "p0001";
  r.static_features = {71.0, 82.5, 1.0};
  r.horizon_hours = 48.0;
  r.events = {{7.25, EventKind::glucose, 8.4},
              {7.3, EventKind::carbs, 45.0},
              {7.35, EventKind::bolus, 6.0},
              {7.4, EventKind::basal, 12.0},
              {12.5, EventKind::glucose, 9.9}};
  std::ostringstream os;
  write_patient_jsonl(os, {r});
  std::istringstream is(os.str());
  auto back = read_patient_jsonl(is);
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == r.id);
  CHECK(back[0].horizon_hours == r.horizon_hours);
  REQUIRE(back[0].events.size() == r.events.size());
  for (std::size_t i = 0; i < r.events.size(); ++i) {
    CHECK(back[0].events[i].time_hours == r.events[i].time_hours);
    CHECK(back[0].events[i].kind == r.events[i].kind);
    CHECK(back[0].events[i].value == r.events[i].value);
  }
  // writing is deterministic
  std::ostringstream os2;
  write_patient_jsonl(os2, {r});
  CHECK(os.str() == os2.str());
}

TEST_CASE("record validation rejects bad data") {
  PatientRecord r;
  r.id = "bad";
  r.horizon_hours = 24.0;
  r.events = {{5.0, EventKind::glucose, 7.0}, {3.0, EventKind::glucose, 7.0}};
  CHECK_THROWS(validate(r));  // unsorted
  r.events = {{3.0, EventKind::glucose, 55.0}};
  CHECK_THROWS(validate(r));  // glucose out of (0, 50)
  r.events = {{3.0, EventKind::bolus, 2.5}};
  CHECK_THROWS(validate(r));  // fractional insulin units
  r.events = {{30.0, EventKind::glucose, 7.0}};
  CHECK_THROWS(validate(r));  // beyond horizon
  r.events = {{3.0, EventKind::carbs, 40.0}};
  CHECK_NOTHROW(validate(r));
}
