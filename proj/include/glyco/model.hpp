#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyco/io.hpp"
#include "glyco/preprocess.hpp"
#include "glyco/rng.hpp"
#include "glyco/tape.hpp"
#include "glyco/trajectory.hpp"
#include "glyco/transformer.hpp"

namespace glyco {

// Source of stochasticity in the generative process: plain parametric heads,
// a per-step Gaussian latent variable, or autoregressive one-step rollout.
enum class Mode { parametric, latent, autoregressive };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::parametric: return "parametric";
    case Mode::latent: return "latent";
    case Mode::autoregressive: return "autoregressive";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "parametric") return Mode::parametric;
  if (s == "latent") return Mode::latent;
  if (s == "autoregressive") return Mode::autoregressive;
  throw std::invalid_argument("unknown mode: " + s);
}

// Conditioning channels; excluded channels are zeroed at the input so no
// gradient reaches their embedding weights.
struct Channels {
  bool past_y = true;
  bool past_x = true;
  bool past_v = true;
  bool future_x = true;
  bool future_v = true;
  bool statics = true;
};

struct ModelConfig {
  int d_model = 64;
  int heads = 16;
  int enc_layers = 1;
  int dec_layers = 1;
  int ffn_hidden = 100;
  int embed_hidden = 100;
  int latent_dim = 16;
  int window = 24;  // K; autoregressive mode works one step at a time
  double prior_sd = 1.0;
  Mode mode = Mode::parametric;
  double lr = 1e-3;
  int batch = 8;
  int static_dim = 3;
  Channels channels;
  // Exposure features: alongside the instantaneous doses/carbs, the inputs
  // carry first-order decayed accumulations (the bedside "on board"
  // quantities). Pure feature engineering over the same conditioning
  // variables; half-lives are input conventions, not learned.
  double iob_half_life = 2.0;
  double cob_half_life = 1.0;

  int step_window() const { return mode == Mode::autoregressive ? 1 : window; }
};

inline void validate(const ModelConfig& c) {
  if (c.d_model % c.heads != 0)
    throw std::invalid_argument("d_model must be divisible by heads");
  if (c.window < 1 || c.latent_dim < 1 || c.enc_layers < 1 || c.dec_layers < 1)
    throw std::invalid_argument("bad model config");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"heads", c.heads},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"ffn_hidden", c.ffn_hidden},
          {"embed_hidden", c.embed_hidden},
          {"latent_dim", c.latent_dim},
          {"window", c.window},
          {"prior_sd", c.prior_sd},
          {"mode", to_string(c.mode)},
          {"lr", c.lr},
          {"batch", c.batch},
          {"static_dim", c.static_dim},
          {"iob_half_life", c.iob_half_life},
          {"cob_half_life", c.cob_half_life},
          {"channels",
           {{"past_y", c.channels.past_y},
            {"past_x", c.channels.past_x},
            {"past_v", c.channels.past_v},
            {"future_x", c.channels.future_x},
            {"future_v", c.channels.future_v},
            {"statics", c.channels.statics}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.embed_hidden = j.at("embed_hidden").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.window = j.at("window").get<int>();
  c.prior_sd = j.at("prior_sd").get<double>();
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<int>();
  c.static_dim = j.at("static_dim").get<int>();
  c.iob_half_life = j.at("iob_half_life").get<double>();
  c.cob_half_life = j.at("cob_half_life").get<double>();
  const auto& ch = j.at("channels");
  c.channels.past_y = ch.at("past_y").get<bool>();
  c.channels.past_x = ch.at("past_x").get<bool>();
  c.channels.past_v = ch.at("past_v").get<bool>();
  c.channels.future_x = ch.at("future_x").get<bool>();
  c.channels.future_v = ch.at("future_v").get<bool>();
  c.channels.statics = ch.at("statics").get<bool>();
  validate(c);
  return c;
}

// All learnable arrays plus the configuration and scaler they were trained
// with. Immutable after training by convention.
struct ModelParams {
  ModelConfig config;
  ScalerParams scaler;
  ParamMap tensors;
  bool trained = false;
};

// Per-(t, l) diagonal Gaussian over the latent sequence, L x past_len.
struct GaussianPosterior {
  Tensor mean;
  Tensor sd;
};

// Per-cell Gaussian outcome parameters in scaled space, P x K.
struct OutcomeDist {
  Tensor mean;
  Tensor sd;
};

inline OutcomeDist unscale(const OutcomeDist& d, const ScalerParams& s) {
  OutcomeDist out = d;
  for (std::size_t i = 0; i < d.mean.size(); ++i) {
    out.mean.at(i) = s.unscale_outcome(d.mean.at(i));
    out.sd.at(i) = s.unscale_outcome_sd(d.sd.at(i));
  }
  return out;
}

// Per-cell Poisson rates in insulin units, D x K.
struct TreatmentDist {
  Tensor rate;
};

namespace model_detail {

inline double norm_static(int i, double v) {
  // Cohort statics are (age-years, weight-kg, type-2 flag); anything else
  // passes through raw.
  switch (i) {
    case 0: return (v - 65.0) / 15.0;
    case 1: return (v - 80.0) / 20.0;
    case 2: return v - 0.5;
    default: return v;
  }
}

inline std::vector<double> static_input(const ModelParams& m,
                                        const std::vector<double>& s) {
  std::vector<double> out(std::size_t(m.config.static_dim), 0.0);
  if (!m.config.channels.statics) return out;
  for (int i = 0; i < m.config.static_dim && i < int(s.size()); ++i)
    out[i] = m.config.static_dim == 3 ? norm_static(i, s[i]) : s[i];
  return out;
}

// Decayed-exposure scales for the on-board input channels.
inline double iob_scale(const ScalerParams& s) {
  return 4.0 * (s.treatment_sd[kBasal] + s.treatment_sd[kBolus]);
}
inline double cob_scale(const ScalerParams& s) { return 2.0 * s.covariate_sd; }

// Insulin "on board" at the window split, accumulated over the past with
// first-order decay. Returns zero when the past-x channel is excluded.
inline double past_insulin_tail(const ModelParams& m, const Context& ctx) {
  if (!m.config.channels.past_x) return 0.0;
  double keep = std::exp2(-1.0 / m.config.iob_half_life);
  double b = 0.0;
  for (int t = 0; t < ctx.past_len(); ++t)
    b = (b + ctx.past_treatments(kBasal, t) + ctx.past_treatments(kBolus, t)) *
        keep;
  return b;
}

inline double past_carb_tail(const ModelParams& m, const Context& ctx) {
  if (!m.config.channels.past_v) return 0.0;
  double keep = std::exp2(-1.0 / m.config.cob_half_life);
  double b = 0.0;
  for (int t = 0; t < ctx.past_len(); ++t)
    b = (b + ctx.past_covariates(0, t)) * keep;
  return b;
}

// past_len x (6 + static_dim):
// scaled [y, basal, bolus, carbs, iob, cob, statics...]
inline Tensor encoder_input(const ModelParams& m, const Context& ctx) {
  const ModelConfig& c = m.config;
  int n = ctx.past_len();
  Tensor f(n, 6 + c.static_dim);
  std::vector<double> s = static_input(m, ctx.static_features);
  double ikeep = std::exp2(-1.0 / c.iob_half_life);
  double ckeep = std::exp2(-1.0 / c.cob_half_life);
  double iob = 0.0, cob = 0.0;
  for (int t = 0; t < n; ++t) {
    if (c.channels.past_y)
      f(t, 0) = m.scaler.scale_outcome(ctx.past_outcomes(0, t));
    if (c.channels.past_x) {
      f(t, 1) = m.scaler.scale_treatment(kBasal, ctx.past_treatments(kBasal, t));
      f(t, 2) = m.scaler.scale_treatment(kBolus, ctx.past_treatments(kBolus, t));
      iob = iob * ikeep + ctx.past_treatments(kBasal, t) +
            ctx.past_treatments(kBolus, t);
      f(t, 4) = iob / iob_scale(m.scaler);
    }
    if (c.channels.past_v) {
      f(t, 3) = m.scaler.scale_covariate(ctx.past_covariates(0, t));
      cob = cob * ckeep + ctx.past_covariates(0, t);
      f(t, 5) = cob / cob_scale(m.scaler);
    }
    for (int i = 0; i < c.static_dim; ++i) f(t, 6 + i) = s[std::size_t(i)];
  }
  return f;
}

// Patient-level summaries of the context, used as conditioning covariates so
// per-step exposure effects are read against the patient's own level rather
// than across patients.
inline double past_outcome_mean_scaled(const ModelParams& m,
                                       const Context& ctx) {
  if (!m.config.channels.past_y) return 0.0;
  double sum = 0;
  long n = 0;
  for (int t = 0; t < ctx.past_len(); ++t)
    if (ctx.past_measured(0, t)) {
      sum += ctx.past_outcomes(0, t);
      ++n;
    }
  return n > 0 ? m.scaler.scale_outcome(sum / double(n)) : 0.0;
}

inline double past_dose_rate_scaled(const ModelParams& m, const Context& ctx) {
  if (!m.config.channels.past_x || ctx.past_len() == 0) return 0.0;
  double sum = 0;
  for (int t = 0; t < ctx.past_len(); ++t)
    sum += ctx.past_treatments(kBasal, t) + ctx.past_treatments(kBolus, t);
  return sum / double(ctx.past_len()) /
         (m.scaler.treatment_sd[kBasal] + m.scaler.treatment_sd[kBolus]);
}

// K x (7 + static_dim): scaled [basal, bolus, carbs, iob, cob, past-y mean,
// past dose rate, statics...]. On-board channels continue the context's
// decayed exposure into the window.
inline Tensor outcome_decoder_input(const ModelParams& m, const Context& ctx,
                                    const Tensor& x_units) {
  const ModelConfig& c = m.config;
  int K = ctx.horizon();
  Tensor f(K, 7 + c.static_dim);
  std::vector<double> s = static_input(m, ctx.static_features);
  double ikeep = std::exp2(-1.0 / c.iob_half_life);
  double ckeep = std::exp2(-1.0 / c.cob_half_life);
  double iob = past_insulin_tail(m, ctx);
  double cob = past_carb_tail(m, ctx);
  double pym = past_outcome_mean_scaled(m, ctx);
  double pxr = past_dose_rate_scaled(m, ctx);
  for (int t = 0; t < K; ++t) {
    if (c.channels.future_x) {
      f(t, 0) = m.scaler.scale_treatment(kBasal, x_units(kBasal, t));
      f(t, 1) = m.scaler.scale_treatment(kBolus, x_units(kBolus, t));
      iob = iob * (t > 0 ? ikeep : 1.0) + x_units(kBasal, t) + x_units(kBolus, t);
    } else {
      iob *= t > 0 ? ikeep : 1.0;
    }
    f(t, 3) = iob / iob_scale(m.scaler);
    if (c.channels.future_v) {
      f(t, 2) = m.scaler.scale_covariate(ctx.future_covariates(0, t));
      cob = cob * (t > 0 ? ckeep : 1.0) + ctx.future_covariates(0, t);
    } else {
      cob *= t > 0 ? ckeep : 1.0;
    }
    f(t, 4) = cob / cob_scale(m.scaler);
    f(t, 5) = pym;
    f(t, 6) = pxr;
    for (int i = 0; i < c.static_dim; ++i) f(t, 7 + i) = s[std::size_t(i)];
  }
  return f;
}

// K x (2 + static_dim): scaled [carbs, cob, statics...]
inline Tensor treatment_decoder_input(const ModelParams& m,
                                      const Context& ctx) {
  const ModelConfig& c = m.config;
  int K = ctx.horizon();
  Tensor f(K, 2 + c.static_dim);
  std::vector<double> s = static_input(m, ctx.static_features);
  double ckeep = std::exp2(-1.0 / c.cob_half_life);
  double cob = past_carb_tail(m, ctx);
  for (int t = 0; t < K; ++t) {
    if (c.channels.future_v) {
      f(t, 0) = m.scaler.scale_covariate(ctx.future_covariates(0, t));
      cob = cob * (t > 0 ? ckeep : 1.0) + ctx.future_covariates(0, t);
    } else {
      cob *= t > 0 ? ckeep : 1.0;
    }
    f(t, 1) = cob / cob_scale(m.scaler);
    for (int i = 0; i < c.static_dim; ++i) f(t, 2 + i) = s[std::size_t(i)];
  }
  return f;
}

inline Val embed_steps(Tape& t, const ModelParams& m, const std::string& side,
                       const Tensor& feats, const std::vector<int>& hours,
                       int start_pos) {
  Val x = mlp(t, m.tensors, side + ".embed", t.leaf(feats));
  Val pe = t.leaf(positional_encoding(start_pos, feats.rows(), m.config.d_model));
  Val he = embedding_lookup(t.param(side + ".hours", m.tensors.at(side + ".hours")),
                            hours);
  return add(add(x, pe), he);
}

struct EncodedPast {
  Val mean;            // past_len x L (plus a leading BOS row in AR mode)
  std::optional<Val> sd;
};

// Transformer encoder over the personalized history. The probabilistic head
// yields the posterior; the deterministic path is its mean head. In
// autoregressive mode a learned begin-of-history token is prepended so the
// first step of a trajectory can condition on an empty past.
inline EncodedPast encode_on_tape(Tape& t, const ModelParams& m,
                                  const Context& ctx, bool probabilistic) {
  const ModelConfig& c = m.config;
  bool ar = c.mode == Mode::autoregressive;
  if (ctx.past_len() == 0 && !ar)
    throw std::invalid_argument("encode: empty history");
  Val h{nullptr, -1};
  if (ctx.past_len() > 0) {
    Tensor feats = encoder_input(m, ctx);
    h = embed_steps(t, m, "enc", feats, ctx.past_hours, 0);
    if (ar) {
      Val bos = t.param("enc.bos", m.tensors.at("enc.bos"));
      h = concat_rows({bos, h});
    }
  } else {
    h = t.param("enc.bos", m.tensors.at("enc.bos"));
  }
  for (int l = 0; l < c.enc_layers; ++l)
    h = encoder_layer(t, m.tensors, "enc.L" + std::to_string(l), h, c.heads);
  EncodedPast out{linear(t, m.tensors, "enc.mu", h), std::nullopt};
  if (probabilistic)
    out.sd = add_const(softplus(linear(t, m.tensors, "enc.sd", h)), 1e-4);
  return out;
}

// Decoder trunk shared by the outcome and treatment heads.
inline Val decode_on_tape(Tape& t, const ModelParams& m, const std::string& side,
                          const Tensor& feats, const Context& ctx, Val z) {
  const ModelConfig& c = m.config;
  Val h = embed_steps(t, m, side, feats, ctx.future_hours, ctx.t_split);
  for (int l = 0; l < c.dec_layers; ++l)
    h = decoder_layer(t, m.tensors, side + ".L" + std::to_string(l), h, z,
                      c.heads, false);
  return h;
}

// Mean head = transformer trunk plus a direct linear read of the per-step
// features, so first-order exposure effects do not have to fight their way
// through the normalized blocks.
inline Val outcome_mean_on_tape(Tape& t, const ModelParams& m,
                                const Context& ctx, const Tensor& x_units,
                                Val z) {
  Tensor feats = outcome_decoder_input(m, ctx, x_units);
  Val h = decode_on_tape(t, m, "dec_y", feats, ctx, z);
  Val trunk = linear(t, m.tensors, "dec_y.mu", h);
  Val direct = linear(t, m.tensors, "dec_y.direct", t.leaf(feats));
  return add(trunk, direct);  // K x P, scaled
}

inline Val outcome_log_sd_on_tape(Tape& t, const ModelParams& m, int K) {
  Val table = t.param("dec_y.log_sd", m.tensors.at("dec_y.log_sd"));
  return slice_rows(table, 0, K);  // K x P
}

inline Val treatment_logits_on_tape(Tape& t, const ModelParams& m,
                                    const Context& ctx, Val z) {
  Tensor feats = treatment_decoder_input(m, ctx);
  Val h = decode_on_tape(t, m, "dec_x", feats, ctx, z);
  Val trunk = linear(t, m.tensors, "dec_x.rate", h);
  Val direct = linear(t, m.tensors, "dec_x.direct", t.leaf(feats));
  return add(trunk, direct);  // K x D, log-rates
}

inline Tensor transpose_tensor(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace model_detail

inline ModelParams init_model(const ModelConfig& cfg, const ScalerParams& scaler,
                              Rng& rng) {
  validate(cfg);
  ModelParams m;
  m.config = cfg;
  m.scaler = scaler;
  ParamMap& p = m.tensors;
  int d = cfg.d_model, L = cfg.latent_dim;
  int enc_in = 6 + cfg.static_dim;
  init_mlp(p, "enc.embed", enc_in, cfg.embed_hidden, d, rng);
  p["enc.hours"] = Tensor::randn(24, d, rng, 0.1);
  p["enc.bos"] = Tensor::randn(1, d, rng, 0.1);
  for (int l = 0; l < cfg.enc_layers; ++l)
    init_encoder_layer(p, "enc.L" + std::to_string(l), d, cfg.ffn_hidden, rng);
  init_linear(p, "enc.mu", d, L, rng);
  init_linear(p, "enc.sd", d, L, rng);

  init_mlp(p, "dec_y.embed", 7 + cfg.static_dim, cfg.embed_hidden, d, rng);
  p["dec_y.hours"] = Tensor::randn(24, d, rng, 0.1);
  for (int l = 0; l < cfg.dec_layers; ++l)
    init_decoder_layer(p, "dec_y.L" + std::to_string(l), d, L, cfg.ffn_hidden,
                       rng);
  init_linear(p, "dec_y.mu", d, kOutcomeChannels, rng);
  init_linear(p, "dec_y.direct", 7 + cfg.static_dim, kOutcomeChannels, rng);
  p["dec_y.log_sd"] = Tensor(cfg.step_window(), kOutcomeChannels);

  init_mlp(p, "dec_x.embed", 2 + cfg.static_dim, cfg.embed_hidden, d, rng);
  p["dec_x.hours"] = Tensor::randn(24, d, rng, 0.1);
  for (int l = 0; l < cfg.dec_layers; ++l)
    init_decoder_layer(p, "dec_x.L" + std::to_string(l), d, L, cfg.ffn_hidden,
                       rng);
  init_linear(p, "dec_x.rate", d, kTreatmentChannels, rng);
  init_linear(p, "dec_x.direct", 2 + cfg.static_dim, kTreatmentChannels, rng);
  return m;
}

// ---- public encode/decode/sample ----

inline Tensor encode_deterministic(const ModelParams& m, const Context& ctx) {
  Tape t;
  auto enc = model_detail::encode_on_tape(t, m, ctx, false);
  return model_detail::transpose_tensor(enc.mean.v());  // L x past_len
}

inline GaussianPosterior encode(const ModelParams& m, const Context& ctx) {
  Tape t;
  auto enc = model_detail::encode_on_tape(t, m, ctx, true);
  return {model_detail::transpose_tensor(enc.mean.v()),
          model_detail::transpose_tensor(enc.sd->v())};
}

// z = mean + sd * eps, elementwise.
inline Tensor sample_latent(const GaussianPosterior& post, Rng& rng) {
  Tensor z = post.mean;
  for (std::size_t i = 0; i < z.size(); ++i)
    z.at(i) += post.sd.at(i) * rng.normal();
  return z;
}

inline OutcomeDist decode_outcome(const ModelParams& m, const Context& ctx,
                                  const Tensor& x_units, const Tensor& z) {
  if (x_units.rows() != kTreatmentChannels || x_units.cols() != ctx.horizon())
    throw std::invalid_argument("decode_outcome: treatment shape mismatch");
  Tape t;
  Val zv = t.leaf(model_detail::transpose_tensor(z));  // past_len x L
  Val mu = model_detail::outcome_mean_on_tape(t, m, ctx, x_units, zv);
  Val log_sd = model_detail::outcome_log_sd_on_tape(t, m, ctx.horizon());
  OutcomeDist d;
  d.mean = model_detail::transpose_tensor(mu.v());
  Tensor sd = log_sd.v();
  for (auto& x : sd.buffer()) x = std::exp(x);
  d.sd = model_detail::transpose_tensor(sd);
  return d;
}

inline TreatmentDist decode_treatment(const ModelParams& m, const Context& ctx,
                                      const Tensor& z) {
  Tape t;
  Val zv = t.leaf(model_detail::transpose_tensor(z));
  Val logits = model_detail::treatment_logits_on_tape(t, m, ctx, zv);
  Tensor rate = logits.v();
  for (auto& x : rate.buffer()) x = std::exp(x);
  TreatmentDist d;
  d.rate = model_detail::transpose_tensor(rate);
  return d;
}

// ---- log-likelihoods (numeric, over the public distribution types) ----

struct LogLik {
  double value = 0.0;
  bool empty_mask = false;
};

// Sum of Gaussian log-densities over measured cells; imputed cells
// contribute exactly zero. y in scaled space, P x K.
inline LogLik loglik_outcome(const OutcomeDist& d, const Tensor& y,
                             const std::vector<std::uint8_t>& mask) {
  if (!d.mean.same_shape(y) || mask.size() != y.size())
    throw std::invalid_argument("loglik_outcome: shape mismatch");
  LogLik out;
  bool any = false;
  constexpr double kLog2Pi = 1.8378770664093453;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    double r = (y.at(i) - d.mean.at(i)) / d.sd.at(i);
    out.value += -0.5 * kLog2Pi - std::log(d.sd.at(i)) - 0.5 * r * r;
  }
  out.empty_mask = !any;
  return out;
}

// Sum over cells of x log(rate) - rate - log(x!), x non-negative integers.
inline double loglik_treatment(const TreatmentDist& d, const Tensor& x_units) {
  if (!d.rate.same_shape(x_units))
    throw std::invalid_argument("loglik_treatment: shape mismatch");
  double ll = 0.0;
  for (std::size_t i = 0; i < x_units.size(); ++i) {
    double x = x_units.at(i);
    if (x < 0 || x != std::floor(x))
      throw std::invalid_argument(
          "loglik_treatment: doses must be non-negative integers");
    double lam = d.rate.at(i);
    ll += x * std::log(lam) - lam - std::lgamma(x + 1.0);
  }
  return ll;
}

// ---- objectives ----

struct ObjectiveOptions {
  double kl_weight = 1.0;
  // Scales the posterior sd before the reparametrized draw; 0 collapses the
  // latent-variable objective onto the parametric one.
  double posterior_sd_scale = 1.0;
};

namespace model_detail {

// Negative log-likelihood of one window on the tape (plus KL in latent
// mode). Gradients flow into every parameter the window touches.
inline Val window_negloglik(Tape& t, const ModelParams& m, const Window& w,
                            Rng* rng, const ObjectiveOptions& opt) {
  const ModelConfig& c = m.config;
  int K = w.horizon();
  if (K != c.step_window())
    throw std::invalid_argument("window length does not match model config");
  const Context& ctx = w.context;

  bool latent = c.mode == Mode::latent;
  EncodedPast enc = encode_on_tape(t, m, ctx, latent);
  Val z = enc.mean;
  Val kl{nullptr, -1};
  if (latent) {
    Val sd = *enc.sd;
    if (opt.posterior_sd_scale != 1.0) sd = scale(sd, opt.posterior_sd_scale);
    Tensor eps(sd.rows(), sd.cols());
    for (auto& e : eps.buffer()) e = rng ? rng->normal() : 0.0;
    z = add(enc.mean, mul(sd, t.leaf(eps)));
    if (opt.kl_weight != 0.0) {
      // KL[N(mu, sd) || N(0, prior_sd)] summed over cells, closed form.
      double sp = c.prior_sd;
      Val t1 = add_const(scale(log(sd), -1.0), std::log(sp));
      Val t2 = scale(add(mul(sd, sd), mul(enc.mean, enc.mean)),
                     1.0 / (2.0 * sp * sp));
      kl = sum_all(add_const(add(t1, t2), -0.5));
    }
  }

  // Outcome term over measured cells, scaled space.
  Tensor y_scaled(K, kOutcomeChannels);
  Tensor mask_mat(K, kOutcomeChannels);
  for (int k = 0; k < K; ++k)
    for (int p = 0; p < kOutcomeChannels; ++p) {
      y_scaled(k, p) = m.scaler.scale_outcome(w.future_outcomes(p, k));
      mask_mat(k, p) = w.future_measured(p, k) ? 1.0 : 0.0;
    }
  Val mu = outcome_mean_on_tape(t, m, ctx, w.future_treatments, z);
  Val log_sd = outcome_log_sd_on_tape(t, m, K);
  Val diff = sub(t.leaf(y_scaled), mu);
  Val quad = scale(mul(mul(diff, diff), exp(scale(log_sd, -2.0))), -0.5);
  constexpr double kLog2Pi = 1.8378770664093453;
  Val cells = add_const(sub(quad, log_sd), -0.5 * kLog2Pi);
  Val ll_y = sum_all(mul(cells, t.leaf(mask_mat)));

  // Treatment term: Poisson over raw integer units; log-rate is the head
  // output itself.
  Tensor x_units(K, kTreatmentChannels);
  double log_fact = 0.0;
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < kTreatmentChannels; ++d) {
      double x = w.future_treatments(d, k);
      x_units(k, d) = x;
      log_fact += std::lgamma(x + 1.0);
    }
  Val logits = treatment_logits_on_tape(t, m, ctx, z);
  Val ll_x = add_const(sum_all(sub(mul(t.leaf(x_units), logits), exp(logits))),
                       -log_fact);

  Val nll = scale(add(ll_y, ll_x), -1.0);
  if (kl.id >= 0) nll = add(nll, scale(kl, opt.kl_weight));
  return nll;
}

// One-step teacher-forced window at split t (t = 0 conditions on the
// begin-of-history token only); bypasses split_window's t >= 1 contract.
inline Window one_step_window(const Grid& g, int t) {
  Window w;
  Context& c = w.context;
  c.past_outcomes = detail::col_slice(g.outcomes, 0, t);
  c.past_treatments = detail::col_slice(g.treatments, 0, t);
  c.past_covariates = detail::col_slice(g.covariates, 0, t);
  c.future_covariates = detail::col_slice(g.covariates, t, t + 1);
  c.static_features = g.static_features;
  c.t_split = t;
  c.patient_id = g.patient_id;
  c.past_mask.assign(std::size_t(kOutcomeChannels) * t, 0);
  for (int i = 0; i < t; ++i) c.past_mask[i] = g.measured(0, i) ? 1 : 0;
  c.past_hours.assign(g.hours_of_day.begin(), g.hours_of_day.begin() + t);
  c.future_hours = {g.hours_of_day[t]};
  w.future_outcomes = detail::col_slice(g.outcomes, t, t + 1);
  w.future_treatments = detail::col_slice(g.treatments, t, t + 1);
  w.future_mask = {std::uint8_t(g.measured(0, t) ? 1 : 0)};
  return w;
}

}  // namespace model_detail

// L1: negative joint log-likelihood with the deterministic encoder, averaged
// over the batch.
inline double objective_l1(const ModelParams& m, const std::vector<Window>& batch,
                           ParamMap* grads = nullptr) {
  if (m.config.mode != Mode::parametric)
    throw std::logic_error("objective_l1 requires parametric mode");
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  ObjectiveOptions opt;
  for (const Window& w : batch) {
    Tape t;
    Val nll = model_detail::window_negloglik(t, m, w, nullptr, opt);
    total += nll.v().item();
    if (grads) {
      t.backward(nll);
      t.harvest_grads(*grads, 1.0 / double(batch.size()));
    }
  }
  return total / double(batch.size());
}

// L2: negative single-sample ELBO (reparametrized reconstruction minus
// closed-form KL), averaged over the batch.
inline double objective_l2(const ModelParams& m, const std::vector<Window>& batch,
                           Rng& rng, ParamMap* grads = nullptr,
                           const ObjectiveOptions& opt = {}) {
  if (m.config.mode != Mode::latent)
    throw std::logic_error("objective_l2 requires latent mode");
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (const Window& w : batch) {
    Tape t;
    Val nll = model_detail::window_negloglik(t, m, w, &rng, opt);
    total += nll.v().item();
    if (grads) {
      t.backward(nll);
      t.harvest_grads(*grads, 1.0 / double(batch.size()));
    }
  }
  return total / double(batch.size());
}

// L3: teacher-forced sum of one-step negative log-likelihoods over each
// grid, averaged over the batch. Steps before t leave per-step losses
// untouched by construction (each step conditions only on hours < t).
inline double objective_l3(const ModelParams& m, const std::vector<Grid>& batch,
                           ParamMap* grads = nullptr,
                           std::vector<std::vector<double>>* per_step = nullptr) {
  if (m.config.mode != Mode::autoregressive)
    throw std::logic_error("objective_l3 requires autoregressive mode");
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  ObjectiveOptions opt;
  if (per_step) per_step->clear();
  for (const Grid& g : batch) {
    std::vector<double> steps;
    for (int t = 0; t < g.T(); ++t) {
      Window w = model_detail::one_step_window(g, t);
      Tape tape;
      Val nll = model_detail::window_negloglik(tape, m, w, nullptr, opt);
      steps.push_back(nll.v().item());
      total += nll.v().item();
      if (grads) {
        tape.backward(nll);
        tape.harvest_grads(*grads, 1.0 / double(batch.size()));
      }
    }
    if (per_step) per_step->push_back(std::move(steps));
  }
  return total / double(batch.size());
}

// ---- sampling ----

namespace model_detail {

inline Context extend_context(const Context& ctx, double y_raw,
                              const std::vector<double>& x_units, double v_raw,
                              int hour) {
  Context c;
  int n = ctx.past_len();
  c.past_outcomes = Tensor(kOutcomeChannels, n + 1);
  c.past_treatments = Tensor(kTreatmentChannels, n + 1);
  c.past_covariates = Tensor(kCovariateChannels, n + 1);
  for (int t = 0; t < n; ++t) {
    c.past_outcomes(0, t) = ctx.past_outcomes(0, t);
    for (int d = 0; d < kTreatmentChannels; ++d)
      c.past_treatments(d, t) = ctx.past_treatments(d, t);
    c.past_covariates(0, t) = ctx.past_covariates(0, t);
  }
  c.past_outcomes(0, n) = y_raw;
  for (int d = 0; d < kTreatmentChannels; ++d)
    c.past_treatments(d, n) = x_units[std::size_t(d)];
  c.past_covariates(0, n) = v_raw;
  c.static_features = ctx.static_features;
  c.past_mask = ctx.past_mask;
  c.past_mask.push_back(1);
  c.past_hours = ctx.past_hours;
  c.past_hours.push_back(hour);
  c.t_split = ctx.t_split + 1;
  c.patient_id = ctx.patient_id;
  // future covariates shrink by one step
  int K = ctx.horizon();
  c.future_covariates = Tensor(kCovariateChannels, K - 1);
  for (int t = 1; t < K; ++t)
    c.future_covariates(0, t - 1) = ctx.future_covariates(0, t);
  c.future_hours.assign(ctx.future_hours.begin() + 1, ctx.future_hours.end());
  return c;
}

inline Context first_step_view(const Context& ctx) {
  Context c = ctx;
  c.future_covariates = Tensor(kCovariateChannels, 1);
  c.future_covariates(0, 0) = ctx.future_covariates(0, 0);
  c.future_hours = {ctx.future_hours[0]};
  return c;
}

}  // namespace model_detail

// S outcome trajectories given a fixed treatment plan, unscaled mmol/L.
// parametric: S Gaussian draws around one decode; latent: a fresh latent draw
// per sample (an infinite mixture); autoregressive: sequential rollout
// feeding sampled outcomes back into the history.
inline std::vector<Tensor> sample_outcomes(const ModelParams& m,
                                           const Tensor& x_units,
                                           const Context& ctx, int S,
                                           Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(S);
  int K = ctx.horizon();
  switch (m.config.mode) {
    case Mode::parametric: {
      Tensor z = encode_deterministic(m, ctx);
      OutcomeDist d = unscale(decode_outcome(m, ctx, x_units, z), m.scaler);
      for (int s = 0; s < S; ++s) {
        Tensor y(kOutcomeChannels, K);
        for (std::size_t i = 0; i < y.size(); ++i)
          y.at(i) = d.mean.at(i) + d.sd.at(i) * rng.normal();
        out.push_back(std::move(y));
      }
      break;
    }
    case Mode::latent: {
      GaussianPosterior post = encode(m, ctx);
      for (int s = 0; s < S; ++s) {
        Tensor z = sample_latent(post, rng);
        OutcomeDist d = unscale(decode_outcome(m, ctx, x_units, z), m.scaler);
        Tensor y(kOutcomeChannels, K);
        for (std::size_t i = 0; i < y.size(); ++i)
          y.at(i) = d.mean.at(i) + d.sd.at(i) * rng.normal();
        out.push_back(std::move(y));
      }
      break;
    }
    case Mode::autoregressive: {
      for (int s = 0; s < S; ++s) {
        Context cur = ctx;
        Tensor y(kOutcomeChannels, K);
        for (int k = 0; k < K; ++k) {
          Context step = model_detail::first_step_view(cur);
          Tensor xk(kTreatmentChannels, 1);
          for (int d = 0; d < kTreatmentChannels; ++d)
            xk(d, 0) = x_units(d, k);
          Tensor z = encode_deterministic(m, step);
          OutcomeDist d = unscale(decode_outcome(m, step, xk, z), m.scaler);
          double yk = d.mean(0, 0) + d.sd(0, 0) * rng.normal();
          y(0, k) = yk;
          if (k + 1 < K)
            cur = model_detail::extend_context(
                cur, yk, {x_units(kBasal, k), x_units(kBolus, k)},
                cur.future_covariates(0, 0), cur.future_hours[0]);
        }
        out.push_back(std::move(y));
      }
      break;
    }
  }
  return out;
}

// U treatment trajectories from p(x | c), non-negative integer units.
// The autoregressive rollout samples outcomes jointly and discards them.
inline std::vector<Tensor> sample_treatments(const ModelParams& m,
                                             const Context& ctx, int U,
                                             Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(U);
  int K = ctx.horizon();
  auto poisson_draw = [&rng](const TreatmentDist& d) {
    Tensor x(d.rate.rows(), d.rate.cols());
    for (std::size_t i = 0; i < x.size(); ++i)
      x.at(i) = double(rng.poisson(d.rate.at(i)));
    return x;
  };
  switch (m.config.mode) {
    case Mode::parametric: {
      Tensor z = encode_deterministic(m, ctx);
      TreatmentDist d = decode_treatment(m, ctx, z);
      for (int u = 0; u < U; ++u) out.push_back(poisson_draw(d));
      break;
    }
    case Mode::latent: {
      GaussianPosterior post = encode(m, ctx);
      for (int u = 0; u < U; ++u) {
        Tensor z = sample_latent(post, rng);
        out.push_back(poisson_draw(decode_treatment(m, ctx, z)));
      }
      break;
    }
    case Mode::autoregressive: {
      for (int u = 0; u < U; ++u) {
        Context cur = ctx;
        Tensor x(kTreatmentChannels, K);
        for (int k = 0; k < K; ++k) {
          Context step = model_detail::first_step_view(cur);
          Tensor z = encode_deterministic(m, step);
          TreatmentDist dx = decode_treatment(m, step, z);
          Tensor xk(kTreatmentChannels, 1);
          for (int d = 0; d < kTreatmentChannels; ++d) {
            xk(d, 0) = double(rng.poisson(dx.rate(d, 0)));
            x(d, k) = xk(d, 0);
          }
          OutcomeDist dy = unscale(decode_outcome(m, step, xk, z), m.scaler);
          double yk = dy.mean(0, 0) + dy.sd(0, 0) * rng.normal();
          if (k + 1 < K)
            cur = model_detail::extend_context(cur, yk, {xk(0, 0), xk(1, 0)},
                                               cur.future_covariates(0, 0),
                                               cur.future_hours[0]);
        }
        out.push_back(std::move(x));
      }
      break;
    }
  }
  return out;
}

// Per-cell Poisson mode: ceil(rate) - 1 (ties at integer rates broken
// downward), never negative.
inline double poisson_mode(double rate) {
  return std::max(0.0, std::ceil(rate) - 1.0);
}

// Most probable treatment strategy. Parametric/latent use the posterior-mean
// latent and the factorized per-cell mode; autoregressive rolls greedily,
// feeding back per-step modes and mean outcomes.
inline Tensor most_probable_treatment(const ModelParams& m, const Context& ctx) {
  int K = ctx.horizon();
  if (m.config.mode != Mode::autoregressive) {
    Tensor z = m.config.mode == Mode::latent ? encode(m, ctx).mean
                                             : encode_deterministic(m, ctx);
    TreatmentDist d = decode_treatment(m, ctx, z);
    Tensor x(kTreatmentChannels, K);
    for (std::size_t i = 0; i < x.size(); ++i)
      x.at(i) = poisson_mode(d.rate.at(i));
    return x;
  }
  Context cur = ctx;
  Tensor x(kTreatmentChannels, K);
  for (int k = 0; k < K; ++k) {
    Context step = model_detail::first_step_view(cur);
    Tensor z = encode_deterministic(m, step);
    TreatmentDist dx = decode_treatment(m, step, z);
    Tensor xk(kTreatmentChannels, 1);
    for (int d = 0; d < kTreatmentChannels; ++d) {
      xk(d, 0) = poisson_mode(dx.rate(d, 0));
      x(d, k) = xk(d, 0);
    }
    OutcomeDist dy = unscale(decode_outcome(m, step, xk, z), m.scaler);
    if (k + 1 < K)
      cur = model_detail::extend_context(cur, dy.mean(0, 0), {xk(0, 0), xk(1, 0)},
                                         cur.future_covariates(0, 0),
                                         cur.future_hours[0]);
  }
  return x;
}

// ---- checkpoint ----

inline constexpr int kCheckpointFormatVersion = 1;

inline void save_checkpoint(const std::string& path, const ModelParams& m) {
  BlockWriter w;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : m.tensors) {
    tensors.push_back({{"name", name},
                       {"rows", t.rows()},
                       {"cols", t.cols()},
                       {"offset", w.add_f64(t.buffer())}});
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"config", to_json(m.config)},
                             {"scaler", to_json(m.scaler)},
                             {"trained", m.trained},
                             {"tensors", tensors}};
  w.write(path, manifest);
}

inline ModelParams load_checkpoint(const std::string& path) {
  BlockReader r(path);
  const nlohmann::json& man = r.manifest();
  if (man.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint version mismatch in " + path);
  ModelParams m;
  m.config = model_config_from_json(man.at("config"));
  m.scaler = scaler_from_json(man.at("scaler"));
  m.trained = man.at("trained").get<bool>();
  for (const auto& t : man.at("tensors")) {
    int rows = t.at("rows").get<int>();
    int cols = t.at("cols").get<int>();
    m.tensors[t.at("name").get<std::string>()] =
        Tensor(rows, cols,
               r.read_f64(t.at("offset"), std::size_t(rows) * cols));
  }
  return m;
}

}  // namespace glyco
