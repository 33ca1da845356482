#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "glyco/tensor.hpp"

namespace glyco {

using ParamMap = std::map<std::string, Tensor>;

// Adaptive-moment optimizer state, one pair of moment buffers per parameter
// tensor. Updates are fully deterministic.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  ParamMap m;
  ParamMap v;
};

inline void adam_step(ParamMap& params, const ParamMap& grads,
                      AdamState& state) {
  state.step_count += 1;
  double b1t = 1.0 - std::pow(state.beta1, double(state.step_count));
  double b2t = 1.0 - std::pow(state.beta2, double(state.step_count));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!p.same_shape(g))
      throw std::invalid_argument("adam_step: grad shape mismatch for " + name);
    Tensor& m = state.m.try_emplace(name, Tensor(p.rows(), p.cols()))
                    .first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.rows(), p.cols()))
                    .first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = g.at(i);
      m.at(i) = state.beta1 * m.at(i) + (1.0 - state.beta1) * gi;
      v.at(i) = state.beta2 * v.at(i) + (1.0 - state.beta2) * gi * gi;
      double mhat = m.at(i) / b1t;
      double vhat = v.at(i) / b2t;
      p.at(i) -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace glyco
