#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "glyco/cohort.hpp"
#include "glyco/decide.hpp"
#include "glyco/metrics.hpp"
#include "glyco/model.hpp"
#include "glyco/train.hpp"
#include "glyco/utility.hpp"

namespace glyco {

// ---- split protocol ----

struct Split {
  std::vector<int> train_idx;
  std::vector<int> val_idx;
};

// Seeded 50/50 splits by patient (never by window), reproducible from
// (n, seed, split id) alone.
inline std::vector<Split> patient_splits(int n_patients, int n_splits,
                                         std::uint64_t seed) {
  std::vector<Split> out;
  Rng root(seed);
  for (int s = 0; s < n_splits; ++s) {
    Rng rng = root.derive("split", std::uint64_t(s));
    std::vector<int> idx(static_cast<std::size_t>(n_patients));
    for (int i = 0; i < n_patients; ++i) idx[std::size_t(i)] = i;
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[std::size_t(rng.uniform_int(0, std::int64_t(i) - 1))]);
    Split sp;
    std::size_t half = idx.size() / 2;
    sp.train_idx.assign(idx.begin(), idx.begin() + std::ptrdiff_t(half));
    sp.val_idx.assign(idx.begin() + std::ptrdiff_t(half), idx.end());
    std::sort(sp.train_idx.begin(), sp.train_idx.end());
    std::sort(sp.val_idx.begin(), sp.val_idx.end());
    out.push_back(std::move(sp));
  }
  return out;
}

inline std::vector<Grid> select_grids(const std::vector<Grid>& grids,
                                      const std::vector<int>& idx) {
  std::vector<Grid> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(grids[std::size_t(i)]);
  return out;
}

// Evaluation windows aligned so the prediction starts at midnight.
inline std::vector<Window> midnight_windows(const Grid& g, int K) {
  std::vector<Window> out;
  for (int t = 24; t + K <= g.T(); t += 24) out.push_back(split_window(g, t, K));
  return out;
}

// Model point forecast: predictive mean given the true future treatments and
// covariates, unscaled.
inline Tensor predict_mean(const ModelParams& m, const Context& ctx,
                           const Tensor& x_future) {
  Tensor z = m.config.mode == Mode::latent ? encode(m, ctx).mean
                                           : encode_deterministic(m, ctx);
  return unscale(decode_outcome(m, ctx, x_future, z), m.scaler).mean;
}

// ---- forecasting evaluation ----

struct ForecastEval {
  MetricsReport model;
  MetricsReport baseline_patient;
  MetricsReport baseline_population;
};

inline ForecastEval evaluate_forecasts(const ModelParams& m,
                                       const std::vector<Grid>& train_grids,
                                       const std::vector<Grid>& val_grids,
                                       int split_id = -1) {
  int K = m.config.window;
  PopulationTimeBaseline pop = fit_population_time(train_grids);
  HorizonAccumulator h_model(K), h_pm(K), h_pt(K);
  double abs_m = 0, sq_m = 0, abs_pm = 0, sq_pm = 0, abs_pt = 0, sq_pt = 0;
  long n = 0;
  for (const Grid& g : val_grids) {
    for (const Window& w : midnight_windows(g, K)) {
      bool any = false;
      for (int k = 0; k < K; ++k) any = any || w.future_measured(0, k);
      if (!any) continue;
      bool any_past = false;
      for (int t = 0; t < w.context.past_len(); ++t)
        any_past = any_past || w.context.past_measured(0, t);
      if (!any_past) continue;
      Tensor pred = predict_mean(m, w.context, w.future_treatments);
      Tensor pm = baseline_patient_mean(w.context);
      Tensor pt = predict_population_time(pop, w.context);
      h_model.add(pred, w.future_outcomes, w.future_mask);
      h_pm.add(pm, w.future_outcomes, w.future_mask);
      h_pt.add(pt, w.future_outcomes, w.future_mask);
      for (int k = 0; k < K; ++k) {
        if (!w.future_measured(0, k)) continue;
        double y = w.future_outcomes(0, k);
        abs_m += std::fabs(pred(0, k) - y);
        sq_m += (pred(0, k) - y) * (pred(0, k) - y);
        abs_pm += std::fabs(pm(0, k) - y);
        sq_pm += (pm(0, k) - y) * (pm(0, k) - y);
        abs_pt += std::fabs(pt(0, k) - y);
        sq_pt += (pt(0, k) - y) * (pt(0, k) - y);
        ++n;
      }
    }
  }
  if (n == 0) throw std::runtime_error("evaluate_forecasts: no measured cells");
  auto mk = [n, split_id](double a, double s,
                          const HorizonAccumulator& h) {
    MetricsReport r;
    r.mae = a / double(n);
    r.rmse = std::sqrt(s / double(n));
    r.n_points = n;
    r.split_id = split_id;
    r.horizon_profile = h.profile();
    return r;
  };
  return {mk(abs_m, sq_m, h_model), mk(abs_pm, sq_pm, h_pm),
          mk(abs_pt, sq_pt, h_pt)};
}

// ---- conditional-set ablations ----

inline Channels parse_channel_set(const std::vector<std::string>& names) {
  Channels ch;
  ch.past_y = ch.past_x = ch.past_v = ch.future_x = ch.future_v = ch.statics =
      false;
  for (const std::string& n : names) {
    if (n == "past-y") ch.past_y = true;
    else if (n == "past-x") ch.past_x = true;
    else if (n == "past-v") ch.past_v = true;
    else if (n == "future-x") ch.future_x = true;
    else if (n == "future-v") ch.future_v = true;
    else if (n == "static") ch.statics = true;
    else throw std::invalid_argument("unknown conditioning channel: " + n);
  }
  return ch;
}

// Trains one model under the given conditional set and evaluates it; shared
// seed across specs so the comparison is paired.
inline MetricsReport ablation_run(const Channels& channels,
                                  const std::vector<Grid>& train_grids,
                                  const std::vector<Grid>& val_grids,
                                  ModelConfig cfg, std::uint64_t seed,
                                  const TrainOptions& opt = {}) {
  cfg.channels = channels;
  TrainResult tr = train(train_grids, val_grids, cfg, Rng(seed), opt);
  return evaluate_forecasts(tr.params, train_grids, val_grids).model;
}

// ---- real-vs-generated discrimination ----

struct SampleWindow {
  Tensor y;  // P x K
  Tensor x;  // D x K
};

namespace eval_detail {

inline std::vector<double> window_features(const SampleWindow& w) {
  int K = w.y.cols();
  double mean = 0, mn = w.y(0, 0), mx = w.y(0, 0);
  for (int k = 0; k < K; ++k) {
    mean += w.y(0, k);
    mn = std::min(mn, w.y(0, k));
    mx = std::max(mx, w.y(0, k));
  }
  mean /= K;
  double var = 0;
  for (int k = 0; k < K; ++k) var += (w.y(0, k) - mean) * (w.y(0, k) - mean);
  var /= K;
  double sd = std::sqrt(var);
  double lag1 = 0;
  if (var > 1e-12 && K > 1) {
    for (int k = 0; k + 1 < K; ++k)
      lag1 += (w.y(0, k) - mean) * (w.y(0, k + 1) - mean);
    lag1 /= double(K - 1) * var;
  }
  double basal_total = 0, bolus_total = 0, basal_count = 0, bolus_count = 0;
  for (int k = 0; k < K; ++k) {
    basal_total += w.x(kBasal, k);
    bolus_total += w.x(kBolus, k);
    basal_count += w.x(kBasal, k) > 0 ? 1 : 0;
    bolus_count += w.x(kBolus, k) > 0 ? 1 : 0;
  }
  return {mean, sd, mn, mx, lag1, basal_total, bolus_total, basal_count,
          bolus_count};
}

// Plain logistic regression by full-batch gradient descent on standardized
// features; deterministic.
inline std::vector<double> fit_logistic(const std::vector<std::vector<double>>& X,
                                        const std::vector<int>& y, int iters,
                                        double lr) {
  std::size_t d = X.empty() ? 0 : X[0].size();
  std::vector<double> w(d + 1, 0.0);  // last = intercept
  for (int it = 0; it < iters; ++it) {
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < X.size(); ++i) {
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * X[i][j];
      double p = 1.0 / (1.0 + std::exp(-z));
      double err = p - y[i];
      for (std::size_t j = 0; j < d; ++j) g[j] += err * X[i][j];
      g[d] += err;
    }
    for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * g[j] / double(X.size());
  }
  return w;
}

inline double auc_from_scores(const std::vector<double>& pos,
                              const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n) wins += 1.0;
      else if (p == n) wins += 0.5;
    }
  return wins / (double(pos.size()) * double(neg.size()));
}

}  // namespace eval_detail

namespace eval_detail {

inline int content_fold(const std::vector<double>& features, int folds) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : features) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return int(h % std::uint64_t(folds));
}

inline double total_feature_variance(const std::vector<std::vector<double>>& X) {
  if (X.empty()) return 0.0;
  std::size_t d = X[0].size();
  double total = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0, var = 0;
    for (const auto& row : X) mean += row[j];
    mean /= double(X.size());
    for (const auto& row : X) var += (row[j] - mean) * (row[j] - mean);
    total += var / double(X.size());
  }
  return total;
}

}  // namespace eval_detail

// 5-fold cross-validated AUC of a logistic regression on trajectory summary
// features. One canonical fit covers the unordered pair (positive class =
// the higher-variance set; ties keep the first argument), and folds hash the
// feature content, so AUC(A, B) + AUC(B, A) = 1 exactly and identical sets
// score exactly 0.5. The returned value is P(first-argument sample ranks
// above second-argument sample).
inline double real_vs_generated_auc(const std::vector<SampleWindow>& real,
                                    const std::vector<SampleWindow>& generated) {
  if (real.empty() || generated.empty())
    throw std::invalid_argument("real_vs_generated_auc: empty set");
  const int folds = 5;
  std::vector<std::vector<double>> Xa, Xb;
  for (const SampleWindow& w : real)
    Xa.push_back(eval_detail::window_features(w));
  for (const SampleWindow& w : generated)
    Xb.push_back(eval_detail::window_features(w));
  bool first_positive = eval_detail::total_feature_variance(Xa) >=
                        eval_detail::total_feature_variance(Xb);

  std::vector<std::vector<double>> X;
  std::vector<int> y;       // canonical labels for fitting
  std::vector<int> member;  // 1 = first argument, 0 = second
  for (auto& row : Xa) {
    X.push_back(std::move(row));
    y.push_back(first_positive ? 1 : 0);
    member.push_back(1);
  }
  for (auto& row : Xb) {
    X.push_back(std::move(row));
    y.push_back(first_positive ? 0 : 1);
    member.push_back(0);
  }
  // Fold = content hash + duplicate rank within the element's own set, so a
  // window and its copy in the other set always share a fold while exact
  // duplicates inside one set still spread across folds.
  std::size_t d = X[0].size();
  std::vector<int> fold(X.size());
  std::map<std::pair<int, std::vector<double>>, int> dup_rank;
  for (std::size_t i = 0; i < X.size(); ++i) {
    int rank = dup_rank[{member[i], X[i]}]++;
    fold[i] = (eval_detail::content_fold(X[i], folds) + rank) % folds;
  }
  // Standardize over the pooled set.
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0, var = 0;
    for (const auto& row : X) mean += row[j];
    mean /= double(X.size());
    for (const auto& row : X) var += (row[j] - mean) * (row[j] - mean);
    var /= double(X.size());
    double sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    for (auto& row : X) row[j] = (row[j] - mean) / sd;
  }
  std::vector<double> first_scores, second_scores;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::vector<double>> Xtr;
    std::vector<int> ytr;
    for (std::size_t i = 0; i < X.size(); ++i)
      if (fold[i] != f) {
        Xtr.push_back(X[i]);
        ytr.push_back(y[i]);
      }
    bool has0 = false, has1 = false;
    for (int yi : ytr) (yi ? has1 : has0) = true;
    if (!has0 || !has1)
      throw std::runtime_error("real_vs_generated_auc: single-class fold");
    std::vector<double> w = eval_detail::fit_logistic(Xtr, ytr, 300, 0.5);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (fold[i] != f) continue;
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * X[i][j];
      (member[i] ? first_scores : second_scores).push_back(z);
    }
  }
  return eval_detail::auc_from_scores(first_scores, second_scores);
}

// ---- simulator-oracle policy evaluation ----

struct PolicyEvalResult {
  double mean_utility = 0.0;
  double time_in_range = 0.0;   // fraction of simulated hours inside the band
  double hypo_rate = 0.0;       // fraction below 3.9 mmol/L
  std::vector<double> per_context_utility;
};

// Rolls each chosen treatment through the ground-truth dynamics (S rollouts
// per context) and scores realized trajectories.
inline PolicyEvalResult policy_evaluation(
    const std::function<Tensor(const Context&, int)>& choose,
    const std::vector<Context>& contexts,
    const std::vector<Phenotype>& phenotypes, const SimConfig& sim,
    const UtilityConfig& cfg, Rng& rng, int S = 100) {
  if (contexts.size() != phenotypes.size())
    throw std::invalid_argument("policy_evaluation: phenotype per context");
  PolicyEvalResult r;
  long in_band = 0, hypo = 0, total_cells = 0;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const Context& ctx = contexts[i];
    Tensor x = choose(ctx, int(i));
    Rng stream = rng.derive("policy-eval", std::uint64_t(i));
    std::vector<Tensor> rollouts = environment_rollout(
        phenotypes[i], sim, ctx, x, ctx.future_covariates, stream, S);
    double u = 0.0;
    for (const Tensor& traj : rollouts) {
      u += utility_trajectory(traj, cfg);
      for (int k = 0; k < traj.cols(); ++k) {
        double g = traj(0, k);
        if (g >= cfg.band_low && g <= cfg.band_high) ++in_band;
        if (g < 3.9) ++hypo;
        ++total_cells;
      }
    }
    r.per_context_utility.push_back(u / double(rollouts.size()));
    r.mean_utility += r.per_context_utility.back();
  }
  r.mean_utility /= double(contexts.size());
  r.time_in_range = double(in_band) / double(total_cells);
  r.hypo_rate = double(hypo) / double(total_cells);
  return r;
}

// Nearest-neighbor L1 distance from a proposed plan to the training plans; a
// feasibility proxy (larger = further off the data support).
inline double out_of_support_score(const Tensor& treatment,
                                   const std::vector<Tensor>& training_plans) {
  if (training_plans.empty())
    throw std::invalid_argument("out_of_support_score: empty reference set");
  double best = std::numeric_limits<double>::infinity();
  for (const Tensor& ref : training_plans) {
    if (!ref.same_shape(treatment)) continue;
    double d = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      d += std::fabs(ref.at(i) - treatment.at(i));
    best = std::min(best, d);
  }
  if (!std::isfinite(best))
    throw std::invalid_argument("out_of_support_score: no same-shape plan");
  return best;
}

// ---- multi-split forecasting evaluation ----

struct SplitEvalOptions {
  int n_splits = 5;
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainOptions train;
  bool glucose_only_ablation = false;
  int threads = 2;
};

struct SplitEvalResult {
  std::vector<ForecastEval> per_split;
  std::vector<MetricsReport> glucose_only;  // parallel to per_split when enabled
};

// Trains and evaluates one model per seeded 50/50 patient split (plus the
// glucose-only conditional set when requested). Splits run in parallel;
// every split derives its own rng, so thread scheduling cannot change any
// number.
inline SplitEvalResult evaluate_splits(const std::vector<Grid>& grids,
                                       const SplitEvalOptions& opt) {
  std::vector<Split> splits =
      patient_splits(int(grids.size()), opt.n_splits, opt.seed);
  SplitEvalResult result;
  result.per_split.resize(std::size_t(opt.n_splits));
  if (opt.glucose_only_ablation)
    result.glucose_only.resize(std::size_t(opt.n_splits));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int s = next.fetch_add(1);
      if (s >= opt.n_splits) return;
      std::vector<Grid> train_grids = select_grids(grids, splits[std::size_t(s)].train_idx);
      std::vector<Grid> val_grids = select_grids(grids, splits[std::size_t(s)].val_idx);
      Rng rng(Rng(opt.seed).derive("split-train", std::uint64_t(s)).next_u64());
      TrainResult tr = train(train_grids, val_grids, opt.model, rng, opt.train);
      result.per_split[std::size_t(s)] =
          evaluate_forecasts(tr.params, train_grids, val_grids, s);
      if (opt.glucose_only_ablation) {
        ModelConfig cfg = opt.model;
        cfg.channels = parse_channel_set({"past-y"});
        Rng arng(Rng(opt.seed).derive("split-ablation", std::uint64_t(s)).next_u64());
        TrainResult ab = train(train_grids, val_grids, cfg, arng, opt.train);
        MetricsReport rep =
            evaluate_forecasts(ab.params, train_grids, val_grids, s).model;
        result.glucose_only[std::size_t(s)] = rep;
      }
    }
  };
  int n_threads = std::max(1, std::min(opt.threads, opt.n_splits));
  std::vector<std::thread> pool;
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return result;
}

// ---- plot-data CSV ----

inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path, std::ios::binary);  // LF endings everywhere
  if (!os) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j)
    os << (j ? "," : "") << header[j];
  os << "\n";
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", row[j]);
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
}

}  // namespace glyco
