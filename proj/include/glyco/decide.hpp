#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "glyco/adam.hpp"
#include "glyco/model.hpp"
#include "glyco/utility.hpp"

namespace glyco {

struct DecisionResult {
  Tensor chosen_treatment;              // D x K, non-negative integers
  double estimated_eu = 0.0;            // max of per_candidate_eu
  std::vector<double> per_candidate_eu;
  int candidate_index = 0;
  bool budget_exhausted = false;
};

namespace decide_detail {

// Conditional expected utility of one candidate under common random numbers:
// every candidate is scored with the same derived outcome-noise stream, so
// comparisons (not marginal estimates) drive the argmax.
inline double score_candidate(const ModelParams& m, const Context& ctx,
                              const Tensor& x, const UtilityConfig& cfg, int S,
                              const Rng& base) {
  Rng stream = base.derive("eu-crn");
  std::vector<Tensor> ys = sample_outcomes(m, x, ctx, S, stream);
  return mc_expected_utility(ys, cfg).estimate;
}

}  // namespace decide_detail

// Direct approach: the most probable treatment strategy; its expected
// utility is estimated afterward for reporting only.
inline DecisionResult decide_direct(const ModelParams& m, const Context& ctx,
                                    const UtilityConfig& cfg, int S, Rng& rng) {
  DecisionResult r;
  r.chosen_treatment = most_probable_treatment(m, ctx);
  r.per_candidate_eu = {decide_detail::score_candidate(m, ctx, r.chosen_treatment,
                                                       cfg, S, rng)};
  r.estimated_eu = r.per_candidate_eu[0];
  r.candidate_index = 0;
  return r;
}

struct SearchConfig {
  int max_evals = 2000;   // budget of expected-utility evaluations
  int random_restarts = 2;
  int restart_dose_max = 10;  // per-cell ceiling for random restart points
  int S = 200;                // outcome samples per evaluation
};

// Indirect approach: coordinate ascent over the integer dose lattice with no
// feasibility constraint (doses are only kept non-negative). Starts from the
// all-zeros plan, the model's most probable plan, and random lattice points;
// keeps the best scored point, earliest on ties.
inline DecisionResult decide_indirect(const ModelParams& m, const Context& ctx,
                                      const UtilityConfig& cfg,
                                      const SearchConfig& sc, Rng& rng) {
  int K = ctx.horizon();
  std::vector<Tensor> starts;
  starts.emplace_back(kTreatmentChannels, K);  // all zeros
  starts.push_back(most_probable_treatment(m, ctx));
  Rng restart_rng = rng.derive("restarts");
  for (int r = 0; r < sc.random_restarts; ++r) {
    Tensor x(kTreatmentChannels, K);
    for (std::size_t i = 0; i < x.size(); ++i)
      x.at(i) = double(restart_rng.uniform_int(0, sc.restart_dose_max));
    starts.push_back(std::move(x));
  }

  int evals = 0;
  auto score = [&](const Tensor& x) {
    ++evals;
    return decide_detail::score_candidate(m, ctx, x, cfg, sc.S, rng);
  };

  DecisionResult best;
  best.per_candidate_eu.resize(starts.size(),
                               -std::numeric_limits<double>::infinity());
  bool have_best = false;
  Rng order_rng = rng.derive("coordinate-order");
  for (std::size_t s = 0; s < starts.size() && evals < sc.max_evals; ++s) {
    Tensor x = starts[s];
    double fx = score(x);
    bool improved = true;
    while (improved && evals < sc.max_evals) {
      improved = false;
      std::vector<int> cells(x.size());
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = int(i);
      for (std::size_t i = cells.size(); i > 1; --i)
        std::swap(cells[i - 1],
                  cells[std::size_t(order_rng.uniform_int(0, std::int64_t(i) - 1))]);
      for (int cell : cells) {
        if (evals >= sc.max_evals) break;
        for (int delta : {+1, -1}) {
          double cand = x.at(std::size_t(cell)) + delta;
          if (cand < 0) continue;
          if (evals >= sc.max_evals) break;
          Tensor xn = x;
          xn.at(std::size_t(cell)) = cand;
          double fn = score(xn);
          if (fn > fx) {
            x = std::move(xn);
            fx = fn;
            improved = true;
            break;
          }
        }
      }
    }
    best.per_candidate_eu[s] = fx;
    if (!have_best || fx > best.estimated_eu) {
      best.estimated_eu = fx;
      best.chosen_treatment = x;
      best.candidate_index = int(s);
      have_best = true;
    }
  }
  best.budget_exhausted = evals >= sc.max_evals;
  // Unvisited restarts keep -inf; trim so the max invariant holds.
  while (best.per_candidate_eu.size() > 1 &&
         !std::isfinite(best.per_candidate_eu.back()))
    best.per_candidate_eu.pop_back();
  return best;
}

// Joint approach: sample U feasible plans from p(x | c), score each with the
// Monte-Carlo conditional expected utility, take the argmax (lowest index on
// ties).
inline DecisionResult decide_joint(const ModelParams& m, const Context& ctx,
                                   const UtilityConfig& cfg, int U, int S,
                                   Rng& rng) {
  if (U < 1 || S < 1) throw std::invalid_argument("decide_joint: U, S >= 1");
  Rng cand_rng = rng.derive("candidates");
  std::vector<Tensor> candidates = sample_treatments(m, ctx, U, cand_rng);
  DecisionResult r;
  r.per_candidate_eu.reserve(U);
  for (int u = 0; u < U; ++u) {
    double eu = decide_detail::score_candidate(m, ctx, candidates[std::size_t(u)],
                                               cfg, S, rng);
    r.per_candidate_eu.push_back(eu);
    if (u == 0 || eu > r.estimated_eu) {
      r.estimated_eu = eu;
      r.candidate_index = u;
    }
  }
  r.chosen_treatment = candidates[std::size_t(r.candidate_index)];
  return r;
}

// ---- policy fine-tuning (A.2.8-style goal-directed generation) ----

struct FinetuneOptions {
  int batch = 8;
  int outcome_samples = 2;     // per sampled plan when estimating utility
  double baseline_decay = 0.99;
  double lr = 1e-3;
};

struct FinetuneTrace {
  std::vector<double> objective;  // running alpha-mixed objective per step
  double final_baseline = 0.0;
};

// Ascends alpha * U_joint + (1 - alpha) * data log-likelihood with respect
// to the treatment decoder only (outcome decoder and encoder frozen, so the
// policy cannot game its own scorer). The utility term uses the
// score-function estimator with a moving-average baseline.
inline FinetuneTrace finetune_policy(ModelParams& m,
                                     const std::vector<Window>& windows,
                                     const UtilityConfig& cfg, double alpha_mix,
                                     int steps, Rng& rng,
                                     const FinetuneOptions& opt = {}) {
  if (m.config.mode == Mode::autoregressive)
    throw std::logic_error("finetune_policy: parametric or latent mode only");
  if (windows.empty()) throw std::invalid_argument("finetune_policy: no data");
  if (alpha_mix < 0.0 || alpha_mix > 1.0)
    throw std::invalid_argument("finetune_policy: alpha in [0, 1]");
  AdamState adam;
  adam.lr = opt.lr;
  FinetuneTrace trace;
  double baseline = 0.0;
  bool baseline_init = false;
  Rng sample_rng = rng.derive("finetune-sampling");
  Rng batch_rng = rng.derive("finetune-batch");

  for (int step = 0; step < steps; ++step) {
    ParamMap grads;
    double objective = 0.0;
    for (int b = 0; b < opt.batch; ++b) {
      const Window& w = windows[std::size_t(
          batch_rng.uniform_int(0, std::int64_t(windows.size()) - 1))];
      const Context& ctx = w.context;
      Tape t;
      model_detail::EncodedPast enc =
          model_detail::encode_on_tape(t, m, ctx, m.config.mode == Mode::latent);
      Val z = enc.mean;
      if (m.config.mode == Mode::latent) {
        Tensor eps(enc.sd->rows(), enc.sd->cols());
        for (auto& e : eps.buffer()) e = sample_rng.normal();
        z = add(enc.mean, mul(*enc.sd, t.leaf(eps)));
      }
      Val logits = model_detail::treatment_logits_on_tape(t, m, ctx, z);

      Val loss{nullptr, -1};
      if (alpha_mix > 0.0) {
        // Sample a plan, roll outcomes through the frozen outcome model,
        // and push log-probability weighted by the centered utility.
        Tensor rates = logits.v();
        for (auto& x : rates.buffer()) x = std::exp(x);
        Tensor x_samp(rates.rows(), rates.cols());
        for (std::size_t i = 0; i < rates.size(); ++i)
          x_samp.at(i) = double(sample_rng.poisson(rates.at(i)));
        Tensor x_units(kTreatmentChannels, w.horizon());
        for (int k = 0; k < w.horizon(); ++k)
          for (int d = 0; d < kTreatmentChannels; ++d)
            x_units(d, k) = x_samp(k, d);
        std::vector<Tensor> ys =
            sample_outcomes(m, x_units, ctx, opt.outcome_samples, sample_rng);
        double u = mc_expected_utility(ys, cfg).estimate;
        double advantage = baseline_init ? u - baseline : 0.0;
        baseline = baseline_init
                       ? opt.baseline_decay * baseline + (1 - opt.baseline_decay) * u
                       : u;
        baseline_init = true;
        objective += u;
        Val ll_samp = sum_all(sub(mul(t.leaf(x_samp), logits), exp(logits)));
        loss = scale(ll_samp, -alpha_mix * advantage);
      }
      if (alpha_mix < 1.0) {
        Tensor x_obs(w.horizon(), kTreatmentChannels);
        for (int k = 0; k < w.horizon(); ++k)
          for (int d = 0; d < kTreatmentChannels; ++d)
            x_obs(k, d) = w.future_treatments(d, k);
        Val ll_data = sum_all(sub(mul(t.leaf(x_obs), logits), exp(logits)));
        objective += ll_data.v().item() * (1.0 - alpha_mix);
        Val term = scale(ll_data, -(1.0 - alpha_mix));
        loss = loss.id < 0 ? term : add(loss, term);
      }
      if (!std::isfinite(loss.v().item()))
        throw std::runtime_error("finetune_policy: non-finite objective");
      t.backward(loss);
      t.harvest_grads(grads, 1.0 / double(opt.batch));
    }
    // Freeze everything but the treatment decoder.
    ParamMap theta_grads;
    for (auto& [name, g] : grads)
      if (name.rfind("dec_x.", 0) == 0) theta_grads.emplace(name, std::move(g));
    adam_step(m.tensors, theta_grads, adam);
    trace.objective.push_back(objective / double(opt.batch));
  }
  trace.final_baseline = baseline;
  return trace;
}

}  // namespace glyco
