#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "glyco/trajectory.hpp"

namespace glyco {

struct MetricsEntry {
  double mae = 0.0;
  double rmse = 0.0;
  long n_points = 0;
};

// Forecast accuracy over measured future cells, unscaled mmol/L.
struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  long n_points = 0;
  std::vector<MetricsEntry> horizon_profile;  // index k = k+1 hours ahead
  int split_id = -1;
};

// Constant prediction at the patient's past average measured glucose.
inline Tensor baseline_patient_mean(const Context& ctx) {
  double sum = 0.0;
  long n = 0;
  for (int t = 0; t < ctx.past_len(); ++t)
    if (ctx.past_measured(0, t)) {
      sum += ctx.past_outcomes(0, t);
      ++n;
    }
  if (n == 0)
    throw std::runtime_error("baseline_patient_mean: no measured past glucose");
  Tensor pred(kOutcomeChannels, ctx.horizon(), sum / double(n));
  return pred;
}

// Population mean of measured glucose per clock hour, fit on training grids.
struct PopulationTimeBaseline {
  std::array<double, 24> hour_mean{};
  std::array<long, 24> hour_count{};
  double global_mean = 0.0;
  bool used_fallback = false;  // set when predicting an uncovered hour
};

inline PopulationTimeBaseline fit_population_time(
    const std::vector<Grid>& train) {
  PopulationTimeBaseline b;
  double total = 0.0;
  long n = 0;
  for (const Grid& g : train)
    for (int t = 0; t < g.T(); ++t)
      if (g.measured(0, t)) {
        int h = g.hours_of_day[std::size_t(t)];
        b.hour_mean[std::size_t(h)] += g.outcomes(0, t);
        b.hour_count[std::size_t(h)] += 1;
        total += g.outcomes(0, t);
        ++n;
      }
  if (n == 0)
    throw std::runtime_error("fit_population_time: no measured glucose");
  b.global_mean = total / double(n);
  for (int h = 0; h < 24; ++h)
    if (b.hour_count[std::size_t(h)] > 0)
      b.hour_mean[std::size_t(h)] /= double(b.hour_count[std::size_t(h)]);
  return b;
}

inline Tensor predict_population_time(PopulationTimeBaseline& b,
                                      const Context& ctx) {
  Tensor pred(kOutcomeChannels, ctx.horizon());
  for (int k = 0; k < ctx.horizon(); ++k) {
    int h = ctx.future_hours[std::size_t(k)];
    if (b.hour_count[std::size_t(h)] > 0) {
      pred(0, k) = b.hour_mean[std::size_t(h)];
    } else {
      pred(0, k) = b.global_mean;
      b.used_fallback = true;
    }
  }
  return pred;
}

// MAE / RMSE over measured cells only.
inline MetricsEntry metrics(const Tensor& pred, const Tensor& truth,
                            const std::vector<std::uint8_t>& mask) {
  if (!pred.same_shape(truth) || mask.size() != truth.size())
    throw std::invalid_argument("metrics: shape mismatch");
  MetricsEntry e;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!mask[i]) continue;
    double d = pred.at(i) - truth.at(i);
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    ++e.n_points;
  }
  if (e.n_points == 0) throw std::runtime_error("metrics: empty mask");
  e.mae = abs_sum / double(e.n_points);
  e.rmse = std::sqrt(sq_sum / double(e.n_points));
  return e;
}

// Accumulates per-hours-ahead errors across windows (index 0 = 1 hour
// ahead). Windows are aligned by the caller (hour 0 = midnight).
class HorizonAccumulator {
 public:
  explicit HorizonAccumulator(int K)
      : abs_(std::size_t(K), 0.0), sq_(std::size_t(K), 0.0),
        n_(std::size_t(K), 0) {}

  void add(const Tensor& pred, const Tensor& truth,
           const std::vector<std::uint8_t>& mask) {
    int K = int(abs_.size());
    if (pred.cols() != K || !pred.same_shape(truth))
      throw std::invalid_argument("horizon: shape mismatch");
    for (int p = 0; p < truth.rows(); ++p)
      for (int k = 0; k < K; ++k) {
        std::size_t i = std::size_t(p) * K + k;
        if (!mask[i]) continue;
        double d = pred(p, k) - truth(p, k);
        abs_[std::size_t(k)] += std::fabs(d);
        sq_[std::size_t(k)] += d * d;
        n_[std::size_t(k)] += 1;
      }
  }

  std::vector<MetricsEntry> profile() const {
    std::vector<MetricsEntry> out(abs_.size());
    for (std::size_t k = 0; k < abs_.size(); ++k) {
      out[k].n_points = n_[k];
      if (n_[k] > 0) {
        out[k].mae = abs_[k] / double(n_[k]);
        out[k].rmse = std::sqrt(sq_[k] / double(n_[k]));
      }
    }
    return out;
  }

 private:
  std::vector<double> abs_, sq_;
  std::vector<long> n_;
};

}  // namespace glyco
