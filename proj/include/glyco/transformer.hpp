#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "glyco/adam.hpp"
#include "glyco/rng.hpp"
#include "glyco/tape.hpp"

namespace glyco {

// Transformer layers expressed as tape ops over named parameters. Parameter
// names are "<prefix>.<piece>"; init_* registers them, *_forward reads them.

inline void init_linear(ParamMap& p, const std::string& name, int in, int out,
                        Rng& rng) {
  double sd = std::sqrt(2.0 / double(in + out));
  p[name + ".w"] = Tensor::randn(in, out, rng, sd);
  p[name + ".b"] = Tensor(1, out);
}

inline Val linear(Tape& t, const ParamMap& p, const std::string& name, Val x) {
  Val w = t.param(name + ".w", p.at(name + ".w"));
  Val b = t.param(name + ".b", p.at(name + ".b"));
  return add_rowvec(matmul(x, w), b);
}

inline void init_layer_norm(ParamMap& p, const std::string& name, int dim) {
  p[name + ".gain"] = Tensor(1, dim, 1.0);
  p[name + ".bias"] = Tensor(1, dim);
}

inline Val layer_norm(Tape& t, const ParamMap& p, const std::string& name,
                      Val x) {
  Val g = t.param(name + ".gain", p.at(name + ".gain"));
  Val b = t.param(name + ".bias", p.at(name + ".bias"));
  return add_rowvec(mul_rowvec(layer_norm_rows(x), g), b);
}

// Single-hidden-layer MLP with tanh nonlinearity (used for input embeddings
// and the position-wise feedforward blocks).
inline void init_mlp(ParamMap& p, const std::string& name, int in, int hidden,
                     int out, Rng& rng) {
  init_linear(p, name + ".h", in, hidden, rng);
  init_linear(p, name + ".o", hidden, out, rng);
}

inline Val mlp(Tape& t, const ParamMap& p, const std::string& name, Val x) {
  return linear(t, p, name + ".o", tanh(linear(t, p, name + ".h", x)));
}

inline void init_attention(ParamMap& p, const std::string& name, int q_in,
                           int kv_in, int d_model, Rng& rng) {
  init_linear(p, name + ".q", q_in, d_model, rng);
  init_linear(p, name + ".k", kv_in, d_model, rng);
  init_linear(p, name + ".v", kv_in, d_model, rng);
  init_linear(p, name + ".o", d_model, d_model, rng);
}

// Multi-head scaled dot-product attention. queries: Tq x q_in,
// keys/values source: Tkv x kv_in. Returns Tq x d_model.
inline Val attention(Tape& t, const ParamMap& p, const std::string& name,
                     Val queries_in, Val kv_in, int heads, bool causal) {
  Val q = linear(t, p, name + ".q", queries_in);
  Val k = linear(t, p, name + ".k", kv_in);
  Val v = linear(t, p, name + ".v", kv_in);
  int d_model = q.cols();
  int dk = d_model / heads;
  int tq = q.rows(), tkv = k.rows();
  std::vector<bool> causal_mask;
  if (causal) {
    causal_mask.resize(std::size_t(tq) * tkv, false);
    for (int i = 0; i < tq; ++i)
      for (int j = i + 1; j < tkv; ++j)
        causal_mask[std::size_t(i) * tkv + j] = true;
  }
  std::vector<Val> head_outs;
  for (int h = 0; h < heads; ++h) {
    Val qh = slice_cols(q, h * dk, (h + 1) * dk);
    Val kh = slice_cols(k, h * dk, (h + 1) * dk);
    Val vh = slice_cols(v, h * dk, (h + 1) * dk);
    Val scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dk)));
    if (causal) scores = masked_fill(scores, causal_mask, -1e30);
    head_outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return linear(t, p, name + ".o", concat_cols(head_outs));
}

// Sinusoidal positional encoding rows for absolute grid positions
// start_pos .. start_pos + length - 1.
inline Tensor positional_encoding(int start_pos, int length, int d_model) {
  Tensor pe(length, d_model);
  for (int i = 0; i < length; ++i) {
    double pos = double(start_pos + i);
    for (int j = 0; j < d_model; j += 2) {
      double freq = std::pow(10000.0, -double(j) / double(d_model));
      pe(i, j) = std::sin(pos * freq);
      if (j + 1 < d_model) pe(i, j + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

// Post-norm encoder/decoder block pieces.
inline void init_encoder_layer(ParamMap& p, const std::string& name,
                               int d_model, int ffn_hidden, Rng& rng) {
  init_attention(p, name + ".self", d_model, d_model, d_model, rng);
  init_layer_norm(p, name + ".ln1", d_model);
  init_mlp(p, name + ".ffn", d_model, ffn_hidden, d_model, rng);
  init_layer_norm(p, name + ".ln2", d_model);
}

inline Val encoder_layer(Tape& t, const ParamMap& p, const std::string& name,
                         Val x, int heads, bool causal = false) {
  x = layer_norm(t, p, name + ".ln1",
                 add(x, attention(t, p, name + ".self", x, x, heads, causal)));
  x = layer_norm(t, p, name + ".ln2", add(x, mlp(t, p, name + ".ffn", x)));
  return x;
}

inline void init_decoder_layer(ParamMap& p, const std::string& name,
                               int d_model, int kv_in, int ffn_hidden,
                               Rng& rng) {
  init_attention(p, name + ".self", d_model, d_model, d_model, rng);
  init_layer_norm(p, name + ".ln1", d_model);
  init_attention(p, name + ".cross", d_model, kv_in, d_model, rng);
  init_layer_norm(p, name + ".ln2", d_model);
  init_mlp(p, name + ".ffn", d_model, ffn_hidden, d_model, rng);
  init_layer_norm(p, name + ".ln3", d_model);
}

// Decoder block with self-attention over the future window and
// cross-attention to the encoded past `memory`.
inline Val decoder_layer(Tape& t, const ParamMap& p, const std::string& name,
                         Val x, Val memory, int heads, bool causal_self) {
  x = layer_norm(
      t, p, name + ".ln1",
      add(x, attention(t, p, name + ".self", x, x, heads, causal_self)));
  x = layer_norm(
      t, p, name + ".ln2",
      add(x, attention(t, p, name + ".cross", x, memory, heads, false)));
  x = layer_norm(t, p, name + ".ln3", add(x, mlp(t, p, name + ".ffn", x)));
  return x;
}

}  // namespace glyco
