#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyco/tensor.hpp"

namespace glyco {

// plateau-exp: flat 1 inside the glucose band, exponential-quadratic decay
// outside, steeper below than above (low values are dangerous, high values
// undesired). gaussian-bump: a single squared-exponential bump, the shape
// for which expected utility under a Gaussian has a closed form.
enum class UtilityShape { plateau_exp, gaussian_bump };

inline const char* to_string(UtilityShape s) {
  return s == UtilityShape::plateau_exp ? "plateau-exp" : "gaussian-bump";
}

inline UtilityShape utility_shape_from_string(const std::string& s) {
  if (s == "plateau-exp") return UtilityShape::plateau_exp;
  if (s == "gaussian-bump") return UtilityShape::gaussian_bump;
  throw std::invalid_argument("unknown utility shape: " + s);
}

struct UtilityConfig {
  double band_low = 3.9;
  double band_high = 10.0;
  double hypo_steepness = 0.5;
  double hyper_steepness = 0.05;
  double gamma = 1.0;                  // temporal discount, (0, 1]
  std::vector<double> alpha = {1.0};   // per-outcome-dimension weights
  UtilityShape shape = UtilityShape::plateau_exp;
  double bump_center = 7.0;            // gaussian-bump parameters
  double bump_sd = 2.0;
};

inline void validate(const UtilityConfig& c) {
  if (!(c.band_low < c.band_high))
    throw std::invalid_argument("utility band must have band_low < band_high");
  if (!(c.hypo_steepness > 0 && c.hyper_steepness > 0 && c.bump_sd > 0))
    throw std::invalid_argument("utility steepness must be positive");
  if (!(c.gamma > 0 && c.gamma <= 1.0))
    throw std::invalid_argument("gamma must lie in (0, 1]");
  for (double a : c.alpha)
    if (!(a > 0)) throw std::invalid_argument("alpha weights must be positive");
}

inline nlohmann::json to_json(const UtilityConfig& c) {
  return {{"band_low", c.band_low},
          {"band_high", c.band_high},
          {"hypo_steepness", c.hypo_steepness},
          {"hyper_steepness", c.hyper_steepness},
          {"gamma", c.gamma},
          {"alpha", c.alpha},
          {"shape", to_string(c.shape)},
          {"bump_center", c.bump_center},
          {"bump_sd", c.bump_sd}};
}

inline UtilityConfig utility_config_from_json(const nlohmann::json& j) {
  UtilityConfig c;
  c.band_low = j.at("band_low").get<double>();
  c.band_high = j.at("band_high").get<double>();
  c.hypo_steepness = j.at("hypo_steepness").get<double>();
  c.hyper_steepness = j.at("hyper_steepness").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.alpha = j.at("alpha").get<std::vector<double>>();
  c.shape = utility_shape_from_string(j.at("shape").get<std::string>());
  c.bump_center = j.at("bump_center").get<double>();
  c.bump_sd = j.at("bump_sd").get<double>();
  validate(c);
  return c;
}

// u(y) in [0, 1]; non-increasing as y moves away from the band.
inline double utility_scalar(double y, const UtilityConfig& c) {
  if (!std::isfinite(y)) throw std::invalid_argument("utility_scalar: y not finite");
  if (c.shape == UtilityShape::gaussian_bump) {
    double d = (y - c.bump_center) / c.bump_sd;
    return std::exp(-0.5 * d * d);
  }
  if (y < c.band_low) {
    double d = c.band_low - y;
    return std::exp(-c.hypo_steepness * d * d);
  }
  if (y > c.band_high) {
    double d = y - c.band_high;
    return std::exp(-c.hyper_steepness * d * d);
  }
  return 1.0;
}

// u(y_{1:K}) = sum_t gamma^t prod_p alpha_p u(y_{p,t}), t counted from 1.
inline double utility_trajectory(const Tensor& y, const UtilityConfig& c) {
  int P = y.rows(), K = y.cols();
  if (int(c.alpha.size()) < P)
    throw std::invalid_argument("utility_trajectory: alpha shorter than P");
  double total = 0.0;
  double g = 1.0;
  for (int t = 0; t < K; ++t) {
    g *= c.gamma;
    double prod = 1.0;
    for (int p = 0; p < P; ++p)
      prod *= c.alpha[std::size_t(p)] * utility_scalar(y(p, t), c);
    total += g * prod;
  }
  return total;
}

struct EuEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  bool single_sample = false;  // standard error undefined, reported as 0
};

// Monte-Carlo conditional expected utility over sampled outcome trajectories.
inline EuEstimate mc_expected_utility(const std::vector<Tensor>& samples,
                                      const UtilityConfig& c) {
  if (samples.empty())
    throw std::invalid_argument("mc_expected_utility: need >= 1 sample");
  double sum = 0.0, sum2 = 0.0;
  for (const Tensor& y : samples) {
    double u = utility_trajectory(y, c);
    sum += u;
    sum2 += u * u;
  }
  std::size_t S = samples.size();
  EuEstimate e;
  e.estimate = sum / double(S);
  if (S == 1) {
    e.single_sample = true;
    return e;
  }
  double var = (sum2 - sum * sum / double(S)) / double(S - 1);
  e.standard_error = std::sqrt(std::max(0.0, var) / double(S));
  return e;
}

// Exact expected utility for per-cell independent Gaussians under the
// gaussian-bump shape:
//   int N(y | mu, sigma^2) exp(-(y-m)^2 / (2 s^2)) dy
//     = s / sqrt(s^2 + sigma^2) * exp(-(mu-m)^2 / (2 (s^2 + sigma^2))),
// combined over cells by the temporal sum with discount and alpha weights.
// Exactness needs Gaussian cell marginals and temporal independence, i.e.
// the parametric mode's predictive distribution.
inline double exact_gaussian_eu(const Tensor& mu, const Tensor& sigma,
                                const UtilityConfig& c) {
  if (c.shape != UtilityShape::gaussian_bump)
    throw std::invalid_argument("exact_gaussian_eu: needs gaussian-bump shape");
  if (!mu.same_shape(sigma))
    throw std::invalid_argument("exact_gaussian_eu: shape mismatch");
  int P = mu.rows(), K = mu.cols();
  if (int(c.alpha.size()) < P)
    throw std::invalid_argument("exact_gaussian_eu: alpha shorter than P");
  double total = 0.0;
  double g = 1.0;
  for (int t = 0; t < K; ++t) {
    g *= c.gamma;
    double prod = 1.0;
    for (int p = 0; p < P; ++p) {
      double s2 = c.bump_sd * c.bump_sd;
      double v = s2 + sigma(p, t) * sigma(p, t);
      double d = mu(p, t) - c.bump_center;
      double cell = c.bump_sd / std::sqrt(v) * std::exp(-d * d / (2.0 * v));
      prod *= c.alpha[std::size_t(p)] * cell;
    }
    total += g * prod;
  }
  return total;
}

}  // namespace glyco
