#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyco/tensor.hpp"

namespace glyco {

// Channel conventions used throughout: one outcome channel (blood glucose,
// mmol/L), two treatment channels (basal insulin = 0, bolus insulin = 1,
// integer units), one covariate channel (carbohydrates, grams).
inline constexpr int kOutcomeChannels = 1;
inline constexpr int kTreatmentChannels = 2;
inline constexpr int kCovariateChannels = 1;
inline constexpr int kBasal = 0;
inline constexpr int kBolus = 1;

enum class EventKind { glucose, basal, bolus, carbs };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::glucose: return "glucose";
    case EventKind::basal: return "basal";
    case EventKind::bolus: return "bolus";
    case EventKind::carbs: return "carbs";
  }
  return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
  if (s == "glucose") return EventKind::glucose;
  if (s == "basal") return EventKind::basal;
  if (s == "bolus") return EventKind::bolus;
  if (s == "carbs") return EventKind::carbs;
  throw std::invalid_argument("unknown event kind: " + s);
}

struct Event {
  double time_hours = 0.0;  // since admission
  EventKind kind = EventKind::glucose;
  double value = 0.0;  // mmol/L, insulin units, or grams
};

// One admission: irregularly timed events plus static patient features.
// Immutable after construction by convention; validate() enforces the
// invariants when records cross an interface.
struct PatientRecord {
  std::string id;
  std::vector<double> static_features;  // age-years, weight-kg, type-2 flag
  std::vector<Event> events;            // sorted by time_hours
  double horizon_hours = 0.0;
};

inline void validate(const Event& e) {
  if (!std::isfinite(e.time_hours) || e.time_hours < 0.0)
    throw std::invalid_argument("event time must be finite and >= 0");
  if (!std::isfinite(e.value) || e.value < 0.0)
    throw std::invalid_argument("event value must be finite and >= 0");
  if (e.kind == EventKind::glucose && (e.value <= 0.0 || e.value >= 50.0))
    throw std::invalid_argument("glucose outside (0, 50) mmol/L");
  if ((e.kind == EventKind::basal || e.kind == EventKind::bolus) &&
      e.value != std::floor(e.value))
    throw std::invalid_argument("insulin dose must be an integer unit count");
}

inline void validate(const PatientRecord& r) {
  if (r.horizon_hours <= 0.0)
    throw std::invalid_argument("horizon_hours must be positive");
  double prev = 0.0;
  for (const Event& e : r.events) {
    validate(e);
    if (e.time_hours < prev)
      throw std::invalid_argument("events not sorted by time");
    if (e.time_hours > r.horizon_hours)
      throw std::invalid_argument("event beyond horizon");
    prev = e.time_hours;
  }
}

// Hourly-resampled trajectories. Arrays are channels x T. outcome_mask is
// true only at hours holding a real measurement.
struct Grid {
  Tensor outcomes;    // P x T, mmol/L (imputed where mask is false)
  Tensor treatments;  // D x T, integer insulin units summed per hour
  Tensor covariates;  // V x T, grams of carbs summed per hour
  std::vector<std::uint8_t> outcome_mask;  // P x T row-major, 1 = measured
  std::vector<int> hours_of_day;           // length T, 0..23
  std::string patient_id;
  std::vector<double> static_features;

  int T() const { return outcomes.cols(); }
  bool measured(int p, int t) const {
    return outcome_mask[std::size_t(p) * T() + t] != 0;
  }
};

// Everything known at decision time for one prediction window.
struct Context {
  Tensor past_outcomes;    // P x t_split
  Tensor past_treatments;  // D x t_split
  Tensor past_covariates;  // V x t_split
  Tensor future_covariates;  // V x K
  std::vector<double> static_features;
  std::vector<std::uint8_t> past_mask;  // P x t_split
  std::vector<int> past_hours;          // length t_split
  std::vector<int> future_hours;        // length K
  int t_split = 0;                      // absolute grid index of the split
  std::string patient_id;

  int past_len() const { return past_outcomes.cols(); }
  int horizon() const { return future_covariates.cols(); }
  bool past_measured(int p, int t) const {
    return past_mask[std::size_t(p) * past_len() + t] != 0;
  }
};

struct Window {
  Context context;
  Tensor future_outcomes;    // P x K
  Tensor future_treatments;  // D x K
  std::vector<std::uint8_t> future_mask;  // P x K

  int horizon() const { return future_outcomes.cols(); }
  bool future_measured(int p, int t) const {
    return future_mask[std::size_t(p) * horizon() + t] != 0;
  }
};

namespace detail {

inline Tensor col_slice(const Tensor& a, int c0, int c1) {
  Tensor out(a.rows(), c1 - c0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = c0; j < c1; ++j) out(i, j - c0) = a(i, j);
  return out;
}

}  // namespace detail

// Splits a grid at t_split: context covers [0, t_split), future covers
// [t_split, t_split + K).
inline Window split_window(const Grid& grid, int t_split, int K) {
  int T = grid.T();
  if (K <= 0) throw std::out_of_range("split_window: K must be positive");
  if (t_split < 1 || t_split + K > T)
    throw std::out_of_range("split_window: t_split out of range");
  Window w;
  Context& c = w.context;
  c.past_outcomes = detail::col_slice(grid.outcomes, 0, t_split);
  c.past_treatments = detail::col_slice(grid.treatments, 0, t_split);
  c.past_covariates = detail::col_slice(grid.covariates, 0, t_split);
  c.future_covariates = detail::col_slice(grid.covariates, t_split, t_split + K);
  c.static_features = grid.static_features;
  c.t_split = t_split;
  c.patient_id = grid.patient_id;
  c.past_mask.resize(std::size_t(kOutcomeChannels) * t_split);
  for (int p = 0; p < kOutcomeChannels; ++p)
    for (int t = 0; t < t_split; ++t)
      c.past_mask[std::size_t(p) * t_split + t] = grid.measured(p, t) ? 1 : 0;
  c.past_hours.assign(grid.hours_of_day.begin(),
                      grid.hours_of_day.begin() + t_split);
  c.future_hours.assign(grid.hours_of_day.begin() + t_split,
                        grid.hours_of_day.begin() + t_split + K);
  w.future_outcomes = detail::col_slice(grid.outcomes, t_split, t_split + K);
  w.future_treatments =
      detail::col_slice(grid.treatments, t_split, t_split + K);
  w.future_mask.resize(std::size_t(kOutcomeChannels) * K);
  for (int p = 0; p < kOutcomeChannels; ++p)
    for (int t = 0; t < K; ++t)
      w.future_mask[std::size_t(p) * K + t] =
          grid.measured(p, t_split + t) ? 1 : 0;
  return w;
}

// All windows with t_split = 1, 1+stride, ..., T-K. Empty when T <= K.
inline std::vector<Window> moving_windows(const Grid& grid, int K,
                                          int stride = 1) {
  if (K <= 0 || stride <= 0)
    throw std::out_of_range("moving_windows: K and stride must be positive");
  std::vector<Window> out;
  int T = grid.T();
  if (T <= K) return out;
  for (int t = 1; t + K <= T; t += stride) out.push_back(split_window(grid, t, K));
  return out;
}

// ---- PatientRecord JSONL ----

inline nlohmann::json to_json(const PatientRecord& r) {
  nlohmann::json events = nlohmann::json::array();
  for (const Event& e : r.events)
    events.push_back({{"t", e.time_hours},
                      {"kind", to_string(e.kind)},
                      {"value", e.value}});
  return {{"id", r.id},
          {"static", r.static_features},
          {"horizon_hours", r.horizon_hours},
          {"events", events}};
}

inline PatientRecord patient_record_from_json(const nlohmann::json& j) {
  PatientRecord r;
  r.id = j.at("id").get<std::string>();
  r.static_features = j.at("static").get<std::vector<double>>();
  r.horizon_hours = j.at("horizon_hours").get<double>();
  for (const auto& ev : j.at("events")) {
    Event e;
    e.time_hours = ev.at("t").get<double>();
    e.kind = event_kind_from_string(ev.at("kind").get<std::string>());
    e.value = ev.at("value").get<double>();
    r.events.push_back(e);
  }
  validate(r);
  return r;
}

inline void write_patient_jsonl(std::ostream& os,
                                const std::vector<PatientRecord>& records) {
  for (const PatientRecord& r : records) os << to_json(r).dump() << "\n";
}

inline std::vector<PatientRecord> read_patient_jsonl(std::istream& is) {
  std::vector<PatientRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(patient_record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline std::vector<PatientRecord> read_patient_jsonl_file(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_patient_jsonl(is);
}

}  // namespace glyco
