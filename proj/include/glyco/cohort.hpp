#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyco/rng.hpp"
#include "glyco/trajectory.hpp"

namespace glyco {

// Latent per-patient physiology. Not a physiological model of diabetes; a
// minimal heterogeneous environment whose marginal statistics are calibrated
// to the descriptive targets (value bands, injection frequencies, timing,
// and the morning-low daily profile).
struct Phenotype {
  double insulin_sensitivity = 0.3;  // mmol/L drop per absorbed unit
  double carb_sensitivity = 0.4;     // mmol/L rise per absorbed 10 g
  double endogenous_drift = 0.3;     // fraction/hour relaxation to set point
  double set_point = 8.0;            // mmol/L
  double noise_sd = 0.2;             // mmol/L per hourly step
  double circadian_amplitude = 0.0;  // mmol/L swing around the set point
  double circadian_peak_hour = 17.0; // daily high; the low sits 12 h away
};

inline void validate(const Phenotype& p) {
  if (!(p.insulin_sensitivity > 0 && p.carb_sensitivity > 0 &&
        p.endogenous_drift > 0 && p.noise_sd >= 0))
    throw std::invalid_argument("phenotype positivity violated");
  if (!(p.set_point >= 6.0 && p.set_point <= 12.0))
    throw std::invalid_argument("set_point outside [6, 12]");
  if (!(p.circadian_amplitude >= 0.0) || p.circadian_peak_hour < 0.0 ||
      p.circadian_peak_hour >= 24.0)
    throw std::invalid_argument("bad circadian parameters");
}

// Additive daily rhythm around the set point, high in the late afternoon and
// low in the early morning.
inline double circadian_offset(const Phenotype& p, double hour_of_day) {
  return p.circadian_amplitude *
         std::cos(2.0 * 3.14159265358979323846 *
                  (hour_of_day - p.circadian_peak_hour) / 24.0);
}

// Hospital-routine schedule and dose ranges. Calibration targets: glucose
// measured at 7-8a/12p/6p/10p, meals ~3/day of 20-70 g, basal 2-20 units at
// 7-8a or 6p once per day, bolus 0-30 units 0-4 times per day. An occasional
// low-probability night check keeps a handful of early-morning measurements
// in the data without moving the histogram mass off the routine hours.
struct SimConfig {
  std::vector<int> meal_hours = {7, 12, 18};
  std::vector<int> measure_hours = {7, 12, 18, 22};
  double carb_min = 20.0, carb_max = 70.0;           // grams per meal
  int basal_dose_min = 2, basal_dose_max = 20;       // units
  int bolus_dose_min = 0, bolus_dose_max = 30;       // units
  std::vector<int> basal_hours = {7, 18};
  int days = 7;
  // probability a patient's chart records carbs at all; reporting patients
  // record every meal, the rest record none
  double reporting_prob_carbs = 0.5;
  int measure_jitter = 1;        // +-hours around each routine measurement
  int night_check_hour = 4;
  double night_check_prob = 0.15;  // per day
  double basal_adherence = 0.9;    // probability a patient is on basal at all
  // late-evening correction bolus: a fixed low per-patient dose given when
  // the bedtime reading runs high
  double night_correction_threshold = 10.0;  // mmol/L
  double night_correction_prob = 0.8;        // given the trigger
  int night_correction_hour_min = 20;

  // Insulin/carb compartments, first-order decay.
  double insulin_half_life_hours = 2.0;
  double carb_half_life_hours = 1.0;

  // Behavioral sliding scale: units = clamp(round((pre-meal glucose - target)
  // * correction_factor + carbs / carb_divisor), min, max). Deliberately
  // coarse so historical dosing is informative but improvable. The jitter
  // terms are exogenous dosing variation (order rounding, nurse judgment):
  // they make the cohort's dose-response identifiable from observational
  // trajectories.
  double scale_target = 7.0;
  double scale_correction = 1.2;
  double scale_carb_divisor = 15.0;
  double bolus_jitter_sd = 2.0;   // units, rounded
  double bolus_skip_prob = 0.06;  // ordered bolus not given
  int basal_day_jitter = 2;       // +- units around the patient's base dose

  // Phenotype sampling ranges (log-uniform except the set point).
  double is_min = 0.18, is_max = 0.45;
  double cs_min = 0.25, cs_max = 0.65;
  double drift_min = 0.15, drift_max = 0.55;
  double set_point_min = 6.0, set_point_max = 12.0;
  double noise_min = 0.10, noise_max = 0.35;
};

inline void validate(const SimConfig& c) {
  auto hours_ok = [](const std::vector<int>& hs) {
    for (int h : hs)
      if (h < 0 || h >= 24) return false;
    return !hs.empty();
  };
  if (!hours_ok(c.meal_hours) || !hours_ok(c.measure_hours) ||
      !hours_ok(c.basal_hours))
    throw std::invalid_argument("sim hours must be non-empty, in [0, 24)");
  if (c.carb_min > c.carb_max || c.basal_dose_min > c.basal_dose_max ||
      c.bolus_dose_min > c.bolus_dose_max)
    throw std::invalid_argument("sim dose ranges must be non-empty");
  if (c.days < 1) throw std::invalid_argument("days must be >= 1");
}

inline Phenotype sample_phenotype(Rng& rng, const SimConfig& cfg) {
  Phenotype p;
  p.insulin_sensitivity = rng.log_uniform(cfg.is_min, cfg.is_max);
  p.carb_sensitivity = rng.log_uniform(cfg.cs_min, cfg.cs_max);
  p.endogenous_drift = rng.log_uniform(cfg.drift_min, cfg.drift_max);
  p.set_point = rng.log_uniform(cfg.set_point_min, cfg.set_point_max);
  p.noise_sd = rng.log_uniform(cfg.noise_min, cfg.noise_max);
  // keep the daily swing inside the value band at both set-point extremes
  double amp_cap =
      std::clamp(std::min(p.set_point - 5.0, 13.0 - p.set_point), 0.6, 2.2);
  p.circadian_amplitude = rng.log_uniform(0.5, amp_cap);
  p.circadian_peak_hour = double(rng.uniform_int(16, 18));
  return p;
}

struct SimState {
  double glucose = 8.0;        // mmol/L
  double insulin_board = 0.0;  // undissipated units
  double carb_board = 0.0;     // undissipated grams
  int hour_of_day = 0;         // clock hour of this state
};

// One hourly step of the two-compartment dynamics. The boards passed in are
// decayed by their half-lives; the absorbed fractions act on glucose this
// step. The daily rhythm is tracked without lag: drift acts on the deviation
// from the hour-dependent anchor. Glucose is clamped to [1, 35] mmol/L.
inline SimState glucose_step(const SimState& s, const Phenotype& ph,
                             const SimConfig& cfg, Rng* rng) {
  if (!(std::isfinite(s.glucose) && std::isfinite(s.insulin_board) &&
        std::isfinite(s.carb_board)) ||
      s.glucose <= 0.0)
    throw std::runtime_error("glucose_step: non-finite or non-positive state");
  double ins_keep = std::exp2(-1.0 / cfg.insulin_half_life_hours);
  double carb_keep = std::exp2(-1.0 / cfg.carb_half_life_hours);
  double absorbed_insulin = s.insulin_board * (1.0 - ins_keep);
  double absorbed_carbs = s.carb_board * (1.0 - carb_keep);
  double noise = (rng && ph.noise_sd > 0) ? ph.noise_sd * rng->normal() : 0.0;
  double deviation = s.glucose - circadian_offset(ph, s.hour_of_day);
  SimState n;
  n.hour_of_day = (s.hour_of_day + 1) % 24;
  n.glucose = deviation + ph.endogenous_drift * (ph.set_point - deviation) -
              ph.insulin_sensitivity * absorbed_insulin +
              ph.carb_sensitivity * absorbed_carbs / 10.0 + noise +
              circadian_offset(ph, n.hour_of_day);
  n.glucose = std::clamp(n.glucose, 1.0, 35.0);
  n.insulin_board = s.insulin_board * ins_keep;
  n.carb_board = s.carb_board * carb_keep;
  return n;
}

inline int sliding_scale_bolus(double pre_meal_glucose, double carbs,
                               const SimConfig& cfg) {
  double raw = (pre_meal_glucose - cfg.scale_target) * cfg.scale_correction +
               carbs / cfg.scale_carb_divisor;
  int dose = int(std::lround(raw));
  return std::clamp(dose, cfg.bolus_dose_min, cfg.bolus_dose_max);
}

// Simulates one admission. Deterministic given (phenotype, config, rng seed).
inline PatientRecord simulate_patient(const std::string& id,
                                      const Phenotype& ph,
                                      const SimConfig& cfg, Rng& rng) {
  validate(ph);
  validate(cfg);
  PatientRecord rec;
  rec.id = id;
  rec.horizon_hours = cfg.days * 24.0;
  double age = double(rng.uniform_int(40, 90));
  double weight = std::round(rng.uniform(55.0, 110.0) * 10.0) / 10.0;
  double type2 = rng.bernoulli(0.8) ? 1.0 : 0.0;
  rec.static_features = {age, weight, type2};

  bool on_basal = rng.bernoulli(cfg.basal_adherence);
  int basal_hour =
      cfg.basal_hours[std::size_t(rng.uniform_int(0, int(cfg.basal_hours.size()) - 1))];
  // Background need scales with how far the set point sits above normal.
  int basal_dose = std::clamp(
      int(std::lround((ph.set_point - 5.0) * 2.0 + rng.uniform(-1.0, 1.0))),
      cfg.basal_dose_min, cfg.basal_dose_max);
  bool reports_carbs = rng.bernoulli(cfg.reporting_prob_carbs);
  int night_correction_dose = int(rng.uniform_int(2, 4));
  // standard tray sizes: per-patient appetite with modest per-meal variation
  double appetite = rng.uniform(cfg.carb_min + 18.0, cfg.carb_max - 18.0);

  SimState st;
  st.hour_of_day = 0;
  st.glucose = std::clamp(
      ph.set_point + circadian_offset(ph, 0) + 0.5 * rng.normal(), 3.0, 20.0);

  int total_hours = cfg.days * 24;
  for (int day = 0; day < cfg.days; ++day) {
    // Schedule this day's measurements up front so jitter cannot reorder
    // event emission.
    std::set<int> measure_at;
    for (int m : cfg.measure_hours) {
      int j = m + int(rng.uniform_int(-cfg.measure_jitter, cfg.measure_jitter));
      if (j >= 0 && j < 24) measure_at.insert(j);
    }
    if (rng.bernoulli(cfg.night_check_prob)) {
      int j = cfg.night_check_hour +
              int(rng.uniform_int(-cfg.measure_jitter, cfg.measure_jitter));
      if (j >= 0 && j < 24) measure_at.insert(j);
    }

    for (int hour = 0; hour < 24; ++hour) {
      int t = day * 24 + hour;
      if (t >= total_hours) break;
      double tick = rng.uniform(0.05, 0.55);  // minutes within the hour

      if (measure_at.count(hour)) {
        double reading = std::round(st.glucose * 10.0) / 10.0;
        reading = std::clamp(reading, 0.1, 49.9);
        rec.events.push_back({t + tick, EventKind::glucose, reading});
        // bedtime correction: fixed low dose when the late reading runs high
        if (hour >= cfg.night_correction_hour_min &&
            reading > cfg.night_correction_threshold &&
            rng.bernoulli(cfg.night_correction_prob)) {
          st.insulin_board += night_correction_dose;
          rec.events.push_back(
              {t + tick + 0.2, EventKind::bolus, double(night_correction_dose)});
        }
      }
      bool is_meal =
          std::find(cfg.meal_hours.begin(), cfg.meal_hours.end(), hour) !=
          cfg.meal_hours.end();
      if (is_meal) {
        double carbs = std::round(std::clamp(
            appetite * rng.uniform(0.85, 1.15), cfg.carb_min, cfg.carb_max));
        st.carb_board += carbs;  // consumption always affects physiology
        if (reports_carbs)
          rec.events.push_back({t + tick + 0.1, EventKind::carbs, carbs});
        // dosing works off the chart: uncharted carbs get no meal bolus term
        int dose =
            sliding_scale_bolus(st.glucose, reports_carbs ? carbs : 0.0, cfg);
        dose += int(std::lround(cfg.bolus_jitter_sd * rng.normal()));
        dose = std::clamp(dose, cfg.bolus_dose_min, cfg.bolus_dose_max);
        if (rng.bernoulli(cfg.bolus_skip_prob)) dose = 0;
        if (dose > 0) {
          st.insulin_board += dose;
          rec.events.push_back({t + tick + 0.2, EventKind::bolus, double(dose)});
        }
      }
      if (on_basal && hour == basal_hour) {
        int dose = std::clamp(
            basal_dose + int(rng.uniform_int(-cfg.basal_day_jitter,
                                             cfg.basal_day_jitter)),
            cfg.basal_dose_min, cfg.basal_dose_max);
        st.insulin_board += dose;
        rec.events.push_back({t + tick + 0.3, EventKind::basal, double(dose)});
      }
      st.hour_of_day = hour;
      st = glucose_step(st, ph, cfg, &rng);
    }
  }
  std::sort(rec.events.begin(), rec.events.end(),
            [](const Event& a, const Event& b) {
              return a.time_hours < b.time_hours;
            });
  validate(rec);
  return rec;
}

struct Cohort {
  std::vector<PatientRecord> records;
  std::vector<Phenotype> phenotypes;
};

// One rng substream per patient, so generation order (or parallelism) can
// never change the output.
inline Cohort generate_cohort(int n_patients, const SimConfig& cfg,
                              std::uint64_t seed) {
  Cohort c;
  Rng root(seed);
  for (int i = 0; i < n_patients; ++i) {
    Rng prng = root.derive("patient", std::uint64_t(i));
    Phenotype ph = sample_phenotype(prng, cfg);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%04d", i);
    c.records.push_back(simulate_patient(buf, ph, cfg, prng));
    c.phenotypes.push_back(ph);
  }
  return c;
}

// Replays dose/carb decay over the past, walks deterministically from the
// last measured glucose to the split, then runs S noisy rollouts of the
// candidate treatment. Trajectory cell k holds glucose at hour t_split + k.
inline std::vector<Tensor> environment_rollout(
    const Phenotype& ph, const SimConfig& cfg, const Context& ctx,
    const Tensor& treatment, const Tensor& carbs, Rng& rng, int S) {
  if (S < 1) throw std::invalid_argument("environment_rollout: S >= 1");
  int K = treatment.cols();
  if (treatment.rows() != kTreatmentChannels || carbs.cols() != K)
    throw std::invalid_argument("environment_rollout: shape mismatch");
  for (std::size_t i = 0; i < treatment.size(); ++i)
    if (treatment.at(i) < 0 || treatment.at(i) != std::floor(treatment.at(i)))
      throw std::invalid_argument(
          "environment_rollout: treatments must be non-negative integers");

  int last_measured = -1;
  for (int t = ctx.past_len() - 1; t >= 0 && last_measured < 0; --t)
    if (ctx.past_measured(0, t)) last_measured = t;
  if (last_measured < 0)
    throw std::runtime_error(
        "environment_rollout: no measured glucose in context");

  double ins_keep = std::exp2(-1.0 / cfg.insulin_half_life_hours);
  double carb_keep = std::exp2(-1.0 / cfg.carb_half_life_hours);
  // Boards at the start of the last-measured hour, from the observed past.
  SimState st;
  for (int t = 0; t < last_measured; ++t) {
    st.insulin_board = (st.insulin_board + ctx.past_treatments(kBasal, t) +
                        ctx.past_treatments(kBolus, t)) *
                       ins_keep;
    st.carb_board = (st.carb_board + ctx.past_covariates(0, t)) * carb_keep;
  }
  // Re-anchor glucose at the measurement and walk noise-free to the split.
  st.glucose = ctx.past_outcomes(0, last_measured);
  for (int t = last_measured; t < ctx.past_len(); ++t) {
    st.insulin_board +=
        ctx.past_treatments(kBasal, t) + ctx.past_treatments(kBolus, t);
    st.carb_board += ctx.past_covariates(0, t);
    st.hour_of_day = ctx.past_hours[std::size_t(t)];
    st = glucose_step(st, ph, cfg, nullptr);
  }

  std::vector<Tensor> out;
  out.reserve(S);
  for (int s = 0; s < S; ++s) {
    Rng stream = rng.derive("rollout", std::uint64_t(s));
    SimState cur = st;
    Tensor traj(kOutcomeChannels, K);
    for (int k = 0; k < K; ++k) {
      traj(0, k) = cur.glucose;
      cur.insulin_board += treatment(kBasal, k) + treatment(kBolus, k);
      cur.carb_board += carbs(0, k);
      cur.hour_of_day = ctx.future_hours[std::size_t(k)];
      cur = glucose_step(cur, ph, cfg, ph.noise_sd > 0 ? &stream : nullptr);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline nlohmann::json to_json(const SimConfig& c) {
  return {{"meal_hours", c.meal_hours},
          {"measure_hours", c.measure_hours},
          {"carb_min", c.carb_min},
          {"carb_max", c.carb_max},
          {"basal_dose_min", c.basal_dose_min},
          {"basal_dose_max", c.basal_dose_max},
          {"bolus_dose_min", c.bolus_dose_min},
          {"bolus_dose_max", c.bolus_dose_max},
          {"basal_hours", c.basal_hours},
          {"days", c.days},
          {"reporting_prob_carbs", c.reporting_prob_carbs},
          {"measure_jitter", c.measure_jitter},
          {"night_check_hour", c.night_check_hour},
          {"night_check_prob", c.night_check_prob},
          {"basal_adherence", c.basal_adherence},
          {"night_correction_threshold", c.night_correction_threshold},
          {"night_correction_prob", c.night_correction_prob},
          {"night_correction_hour_min", c.night_correction_hour_min},
          {"insulin_half_life_hours", c.insulin_half_life_hours},
          {"carb_half_life_hours", c.carb_half_life_hours},
          {"scale_target", c.scale_target},
          {"scale_correction", c.scale_correction},
          {"scale_carb_divisor", c.scale_carb_divisor},
          {"bolus_jitter_sd", c.bolus_jitter_sd},
          {"bolus_skip_prob", c.bolus_skip_prob},
          {"basal_day_jitter", c.basal_day_jitter},
          {"is_min", c.is_min},
          {"is_max", c.is_max},
          {"cs_min", c.cs_min},
          {"cs_max", c.cs_max},
          {"drift_min", c.drift_min},
          {"drift_max", c.drift_max},
          {"set_point_min", c.set_point_min},
          {"set_point_max", c.set_point_max},
          {"noise_min", c.noise_min},
          {"noise_max", c.noise_max}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  c.meal_hours = j.at("meal_hours").get<std::vector<int>>();
  c.measure_hours = j.at("measure_hours").get<std::vector<int>>();
  c.carb_min = j.at("carb_min").get<double>();
  c.carb_max = j.at("carb_max").get<double>();
  c.basal_dose_min = j.at("basal_dose_min").get<int>();
  c.basal_dose_max = j.at("basal_dose_max").get<int>();
  c.bolus_dose_min = j.at("bolus_dose_min").get<int>();
  c.bolus_dose_max = j.at("bolus_dose_max").get<int>();
  c.basal_hours = j.at("basal_hours").get<std::vector<int>>();
  c.days = j.at("days").get<int>();
  c.reporting_prob_carbs = j.at("reporting_prob_carbs").get<double>();
  c.measure_jitter = j.at("measure_jitter").get<int>();
  c.night_check_hour = j.at("night_check_hour").get<int>();
  c.night_check_prob = j.at("night_check_prob").get<double>();
  c.basal_adherence = j.at("basal_adherence").get<double>();
  c.night_correction_threshold = j.at("night_correction_threshold").get<double>();
  c.night_correction_prob = j.at("night_correction_prob").get<double>();
  c.night_correction_hour_min = j.at("night_correction_hour_min").get<int>();
  c.insulin_half_life_hours = j.at("insulin_half_life_hours").get<double>();
  c.carb_half_life_hours = j.at("carb_half_life_hours").get<double>();
  c.scale_target = j.at("scale_target").get<double>();
  c.scale_correction = j.at("scale_correction").get<double>();
  c.scale_carb_divisor = j.at("scale_carb_divisor").get<double>();
  c.bolus_jitter_sd = j.at("bolus_jitter_sd").get<double>();
  c.bolus_skip_prob = j.at("bolus_skip_prob").get<double>();
  c.basal_day_jitter = j.at("basal_day_jitter").get<int>();
  c.is_min = j.at("is_min").get<double>();
  c.is_max = j.at("is_max").get<double>();
  c.cs_min = j.at("cs_min").get<double>();
  c.cs_max = j.at("cs_max").get<double>();
  c.drift_min = j.at("drift_min").get<double>();
  c.drift_max = j.at("drift_max").get<double>();
  c.set_point_min = j.at("set_point_min").get<double>();
  c.set_point_max = j.at("set_point_max").get<double>();
  c.noise_min = j.at("noise_min").get<double>();
  c.noise_max = j.at("noise_max").get<double>();
  validate(c);
  return c;
}

// ---- phenotype sidecar JSONL ----

inline nlohmann::json to_json(const Phenotype& p) {
  return {{"insulin_sensitivity", p.insulin_sensitivity},
          {"carb_sensitivity", p.carb_sensitivity},
          {"endogenous_drift", p.endogenous_drift},
          {"set_point", p.set_point},
          {"noise_sd", p.noise_sd},
          {"circadian_amplitude", p.circadian_amplitude},
          {"circadian_peak_hour", p.circadian_peak_hour}};
}

inline Phenotype phenotype_from_json(const nlohmann::json& j) {
  Phenotype p;
  p.insulin_sensitivity = j.at("insulin_sensitivity").get<double>();
  p.carb_sensitivity = j.at("carb_sensitivity").get<double>();
  p.endogenous_drift = j.at("endogenous_drift").get<double>();
  p.set_point = j.at("set_point").get<double>();
  p.noise_sd = j.at("noise_sd").get<double>();
  p.circadian_amplitude = j.at("circadian_amplitude").get<double>();
  p.circadian_peak_hour = j.at("circadian_peak_hour").get<double>();
  validate(p);
  return p;
}

}  // namespace glyco
