#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "glyco/adam.hpp"
#include "glyco/log.hpp"
#include "glyco/model.hpp"
#include "glyco/preprocess.hpp"

namespace glyco {

struct TrainOptions {
  int steps = 800;
  int eval_every = 50;
  int max_val_windows = 64;
  bool verbose = false;
};

struct TrainResult {
  ModelParams params;                      // best-validation parameters
  std::vector<double> train_trace;         // per-step batch loss
  std::vector<std::pair<int, double>> val_trace;
  double best_val = std::numeric_limits<double>::quiet_NaN();
  int best_step = -1;
};

namespace train_detail {

// Mean negative log-likelihood over a batch of windows, any mode; gradients
// summed per window tape in batch order.
inline double batch_negloglik(const ModelParams& m,
                              const std::vector<Window>& batch, Rng* rng,
                              const ObjectiveOptions& opt,
                              ParamMap* grads = nullptr) {
  double total = 0.0;
  for (const Window& w : batch) {
    Tape t;
    Val nll = model_detail::window_negloglik(t, m, w, rng, opt);
    total += nll.v().item();
    if (grads) {
      t.backward(nll);
      t.harvest_grads(*grads, 1.0 / double(batch.size()));
    }
  }
  return total / double(batch.size());
}

inline Window sample_window(const Grid& g, const ModelConfig& cfg, Rng& rng) {
  if (cfg.mode == Mode::autoregressive) {
    int t = int(rng.uniform_int(0, g.T() - 1));
    return model_detail::one_step_window(g, t);
  }
  int t = int(rng.uniform_int(1, g.T() - cfg.window));
  return split_window(g, t, cfg.window);
}

inline std::vector<Window> collect_val_windows(const std::vector<Grid>& val,
                                               const ModelConfig& cfg,
                                               int max_windows, Rng rng) {
  std::vector<Window> out;
  if (val.empty()) return out;
  for (int i = 0; i < max_windows; ++i) {
    const Grid& g = val[std::size_t(rng.uniform_int(0, std::int64_t(val.size()) - 1))];
    if (cfg.mode != Mode::autoregressive && g.T() <= cfg.window) continue;
    out.push_back(sample_window(g, cfg, rng));
  }
  return out;
}

}  // namespace train_detail

// Stochastic optimization over moving windows with mini-batches of patients.
// Fully seeded: identical (data, config, rng) gives identical traces and
// parameters. Returns the best-validation parameters (final parameters when
// no validation set is given). Non-finite loss aborts with a diagnostic.
inline TrainResult train(const std::vector<Grid>& train_grids,
                         const std::vector<Grid>& val_grids,
                         const ModelConfig& cfg, Rng rng,
                         const TrainOptions& opt = {}) {
  if (int(train_grids.size()) < 1)
    throw std::invalid_argument("train: empty training set");
  std::vector<const Grid*> usable;
  for (const Grid& g : train_grids)
    if (cfg.mode == Mode::autoregressive || g.T() > cfg.window)
      usable.push_back(&g);
  if (usable.empty())
    throw std::invalid_argument("train: no grid long enough for the window");

  ScalerParams scaler = fit_scaler(train_grids);
  Rng init_rng = rng.derive("init");
  ModelParams model = init_model(cfg, scaler, init_rng);
  AdamState adam;
  adam.lr = cfg.lr;

  Rng batch_rng = rng.derive("batches");
  Rng latent_rng = rng.derive("latent");
  std::vector<Window> val_windows = train_detail::collect_val_windows(
      val_grids, cfg, opt.max_val_windows, rng.derive("val-windows"));

  TrainResult result;
  ModelParams best = model;
  ObjectiveOptions obj_opt;

  for (int step = 0; step < opt.steps; ++step) {
    std::vector<Window> batch;
    batch.reserve(std::size_t(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const Grid& g = *usable[std::size_t(
          batch_rng.uniform_int(0, std::int64_t(usable.size()) - 1))];
      batch.push_back(train_detail::sample_window(g, cfg, batch_rng));
    }
    ParamMap grads;
    double loss = train_detail::batch_negloglik(
        model, batch, cfg.mode == Mode::latent ? &latent_rng : nullptr, obj_opt,
        &grads);
    if (!std::isfinite(loss))
      throw std::runtime_error("train: loss diverged (non-finite) at step " +
                               std::to_string(step));
    adam_step(model.tensors, grads, adam);
    result.train_trace.push_back(loss);

    bool last = step + 1 == opt.steps;
    if (!val_windows.empty() &&
        ((step + 1) % opt.eval_every == 0 || last)) {
      // Fresh derived stream per evaluation point keeps latent-mode
      // validation losses comparable across steps.
      Rng val_eps = rng.derive("val-eps");
      double val = train_detail::batch_negloglik(
          model, val_windows,
          cfg.mode == Mode::latent ? &val_eps : nullptr, obj_opt);
      result.val_trace.emplace_back(step + 1, val);
      if (std::isnan(result.best_val) || val < result.best_val) {
        result.best_val = val;
        result.best_step = step + 1;
        best = model;
      }
      if (opt.verbose)
        log_info("step " + std::to_string(step + 1) + " train " +
                 std::to_string(loss) + " val " + std::to_string(val));
    } else if (opt.verbose && (step + 1) % opt.eval_every == 0) {
      log_info("step " + std::to_string(step + 1) + " train " +
               std::to_string(loss));
    }
  }

  result.params = val_windows.empty() ? model : best;
  result.params.trained = true;
  return result;
}

}  // namespace glyco
