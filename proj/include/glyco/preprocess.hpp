#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyco/io.hpp"
#include "glyco/trajectory.hpp"

namespace glyco {

// Outcomes are centered and scaled; treatments and covariates are scaled
// only, so zeros (no dose, no meal) stay exactly zero.
struct ScalerParams {
  double outcome_mean = 0.0;
  double outcome_sd = 1.0;
  std::vector<double> treatment_sd = std::vector<double>(kTreatmentChannels, 1.0);
  double covariate_sd = 1.0;

  double scale_outcome(double y) const { return (y - outcome_mean) / outcome_sd; }
  double unscale_outcome(double y) const { return y * outcome_sd + outcome_mean; }
  double unscale_outcome_sd(double sd) const { return sd * outcome_sd; }
  double scale_treatment(int d, double x) const { return x / treatment_sd[d]; }
  double scale_covariate(double v) const { return v / covariate_sd; }
};

inline void validate(const ScalerParams& s) {
  if (!(s.outcome_sd > 0) || !(s.covariate_sd > 0))
    throw std::invalid_argument("scaler sds must be positive");
  for (double sd : s.treatment_sd)
    if (!(sd > 0)) throw std::invalid_argument("scaler sds must be positive");
}

inline nlohmann::json to_json(const ScalerParams& s) {
  return {{"outcome_mean", s.outcome_mean},
          {"outcome_sd", s.outcome_sd},
          {"treatment_sd", s.treatment_sd},
          {"covariate_sd", s.covariate_sd}};
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams s;
  s.outcome_mean = j.at("outcome_mean").get<double>();
  s.outcome_sd = j.at("outcome_sd").get<double>();
  s.treatment_sd = j.at("treatment_sd").get<std::vector<double>>();
  s.covariate_sd = j.at("covariate_sd").get<double>();
  validate(s);
  return s;
}

// Irregular record -> hourly grid. Glucose is linearly interpolated between
// measurements (held constant beyond the ends) and masked true only at hours
// holding a real measurement; doses and carbs are summed into their hour bin
// and zero elsewhere. T = ceil(horizon_hours).
inline Grid resample_hourly(const PatientRecord& rec) {
  validate(rec);
  int T = int(std::ceil(rec.horizon_hours));
  std::vector<std::pair<double, double>> glucose;  // (time, value)
  Grid g;
  g.outcomes = Tensor(kOutcomeChannels, T);
  g.treatments = Tensor(kTreatmentChannels, T);
  g.covariates = Tensor(kCovariateChannels, T);
  g.outcome_mask.assign(std::size_t(kOutcomeChannels) * T, 0);
  g.hours_of_day.resize(T);
  for (int t = 0; t < T; ++t) g.hours_of_day[t] = t % 24;
  g.patient_id = rec.id;
  g.static_features = rec.static_features;

  std::vector<double> hour_sum(T, 0.0);
  std::vector<int> hour_count(T, 0);
  for (const Event& e : rec.events) {
    int bin = std::min(int(std::floor(e.time_hours)), T - 1);
    switch (e.kind) {
      case EventKind::glucose:
        glucose.emplace_back(e.time_hours, e.value);
        hour_sum[bin] += e.value;
        hour_count[bin] += 1;
        break;
      case EventKind::basal:
        g.treatments(kBasal, bin) += e.value;
        break;
      case EventKind::bolus:
        g.treatments(kBolus, bin) += e.value;
        break;
      case EventKind::carbs:
        g.covariates(0, bin) += e.value;
        break;
    }
  }
  if (glucose.size() < 2)
    throw std::runtime_error("resample_hourly: need >= 2 glucose events for " +
                             rec.id);

  auto interp_at = [&](double t) {
    if (t <= glucose.front().first) return glucose.front().second;
    if (t >= glucose.back().first) return glucose.back().second;
    auto hi = std::lower_bound(
        glucose.begin(), glucose.end(), t,
        [](const std::pair<double, double>& a, double v) { return a.first < v; });
    auto lo = hi - 1;
    double w = (t - lo->first) / (hi->first - lo->first);
    return lo->second + w * (hi->second - lo->second);
  };

  for (int t = 0; t < T; ++t) {
    if (hour_count[t] > 0) {
      g.outcomes(0, t) = hour_sum[t] / hour_count[t];
      g.outcome_mask[t] = 1;
    } else {
      g.outcomes(0, t) = interp_at(double(t));
    }
  }
  return g;
}

// Outcome statistics over measured cells only; treatment/covariate spreads
// over all cells. A constant channel gets sd 1 so scaling is the identity.
inline ScalerParams fit_scaler(const std::vector<Grid>& grids) {
  if (grids.empty()) throw std::invalid_argument("fit_scaler: empty dataset");
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  for (const Grid& g : grids)
    for (int t = 0; t < g.T(); ++t)
      if (g.measured(0, t)) {
        double y = g.outcomes(0, t);
        sum += y;
        sum2 += y * y;
        ++n;
      }
  if (n < 2)
    throw std::invalid_argument("fit_scaler: need >= 2 measured outcomes");
  ScalerParams s;
  s.outcome_mean = sum / double(n);
  double var = sum2 / double(n) - s.outcome_mean * s.outcome_mean;
  s.outcome_sd = var > 1e-24 ? std::sqrt(var) : 1.0;

  auto spread = [](auto cell_sum2, long count) {
    double v = count > 0 ? cell_sum2 / double(count) : 0.0;
    return v > 1e-24 ? std::sqrt(v) : 1.0;
  };
  for (int d = 0; d < kTreatmentChannels; ++d) {
    double s2 = 0.0, mean = 0.0;
    long cnt = 0;
    for (const Grid& g : grids)
      for (int t = 0; t < g.T(); ++t) {
        mean += g.treatments(d, t);
        ++cnt;
      }
    mean /= double(cnt);
    for (const Grid& g : grids)
      for (int t = 0; t < g.T(); ++t) {
        double dv = g.treatments(d, t) - mean;
        s2 += dv * dv;
      }
    s.treatment_sd[d] = spread(s2, cnt);
  }
  {
    double s2 = 0.0, mean = 0.0;
    long cnt = 0;
    for (const Grid& g : grids)
      for (int t = 0; t < g.T(); ++t) {
        mean += g.covariates(0, t);
        ++cnt;
      }
    mean /= double(cnt);
    for (const Grid& g : grids)
      for (int t = 0; t < g.T(); ++t) {
        double dv = g.covariates(0, t) - mean;
        s2 += dv * dv;
      }
    s.covariate_sd = spread(s2, cnt);
  }
  return s;
}

inline Grid apply_scaler(const Grid& g, const ScalerParams& s) {
  Grid out = g;
  for (int t = 0; t < g.T(); ++t) {
    out.outcomes(0, t) = s.scale_outcome(g.outcomes(0, t));
    for (int d = 0; d < kTreatmentChannels; ++d)
      out.treatments(d, t) = s.scale_treatment(d, g.treatments(d, t));
    out.covariates(0, t) = s.scale_covariate(g.covariates(0, t));
  }
  return out;
}

inline Grid invert_scaler(const Grid& g, const ScalerParams& s) {
  Grid out = g;
  for (int t = 0; t < g.T(); ++t) {
    out.outcomes(0, t) = s.unscale_outcome(g.outcomes(0, t));
    for (int d = 0; d < kTreatmentChannels; ++d)
      out.treatments(d, t) = g.treatments(d, t) * s.treatment_sd[d];
    out.covariates(0, t) = g.covariates(0, t) * s.covariate_sd;
  }
  return out;
}

// ---- dataset container file ----

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  std::vector<Grid> grids;   // raw (unscaled) values
  ScalerParams scaler;       // fit over the contained grids
};

inline void write_dataset(const std::string& path, const Dataset& ds) {
  BlockWriter w;
  nlohmann::json patients = nlohmann::json::array();
  for (const Grid& g : ds.grids) {
    int T = g.T();
    nlohmann::json p;
    p["id"] = g.patient_id;
    p["T"] = T;
    p["static"] = g.static_features;
    p["off_outcomes"] = w.add_f64(g.outcomes.buffer());
    p["off_treatments"] = w.add_f64(g.treatments.buffer());
    p["off_covariates"] = w.add_f64(g.covariates.buffer());
    std::vector<double> hours(g.hours_of_day.begin(), g.hours_of_day.end());
    p["off_hours"] = w.add_f64(hours);
    p["off_mask"] = w.add_bits(g.outcome_mask);
    patients.push_back(std::move(p));
  }
  nlohmann::json manifest = {{"version", kDatasetFormatVersion},
                             {"P", kOutcomeChannels},
                             {"D", kTreatmentChannels},
                             {"V", kCovariateChannels},
                             {"scaler", to_json(ds.scaler)},
                             {"patients", patients}};
  w.write(path, manifest);
}

inline Dataset read_dataset(const std::string& path) {
  BlockReader r(path);
  const nlohmann::json& m = r.manifest();
  if (m.at("version").get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("dataset version mismatch in " + path);
  Dataset ds;
  ds.scaler = scaler_from_json(m.at("scaler"));
  for (const auto& p : m.at("patients")) {
    Grid g;
    int T = p.at("T").get<int>();
    g.patient_id = p.at("id").get<std::string>();
    g.static_features = p.at("static").get<std::vector<double>>();
    g.outcomes = Tensor(kOutcomeChannels, T,
                        r.read_f64(p.at("off_outcomes"), std::size_t(kOutcomeChannels) * T));
    g.treatments = Tensor(kTreatmentChannels, T,
                          r.read_f64(p.at("off_treatments"), std::size_t(kTreatmentChannels) * T));
    g.covariates = Tensor(kCovariateChannels, T,
                          r.read_f64(p.at("off_covariates"), std::size_t(kCovariateChannels) * T));
    std::vector<double> hours = r.read_f64(p.at("off_hours"), std::size_t(T));
    g.hours_of_day.assign(hours.begin(), hours.end());
    g.outcome_mask = r.read_bits(p.at("off_mask"), std::size_t(kOutcomeChannels) * T);
    ds.grids.push_back(std::move(g));
  }
  return ds;
}

inline Dataset preprocess_records(const std::vector<PatientRecord>& records) {
  Dataset ds;
  for (const PatientRecord& r : records) ds.grids.push_back(resample_hourly(r));
  ds.scaler = fit_scaler(ds.grids);
  return ds;
}

}  // namespace glyco
