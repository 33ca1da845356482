#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "glyco/tensor.hpp"

namespace glyco {

// Reverse-mode autodiff over Tensors. A Tape records the operation graph in
// creation order (which is a topological order); backward() walks it once in
// reverse, accumulating exact analytic gradients. Every op output is checked
// for NaN/Inf and trips a guard if non-finite.
//
// A Tape is single-threaded; run one Tape per thread for data parallelism.
class Tape;

struct Val {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& v() const;
  int rows() const { return v().rows(); }
  int cols() const { return v().cols(); }
};

class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    std::function<void(Tape&, const Tensor&)> back;  // grad wrt output -> parents
    bool requires_grad = false;
  };

  Val leaf(Tensor value, bool requires_grad = false) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), Tensor(), nullptr, requires_grad});
    return Val{this, int(nodes_.size()) - 1};
  }

  // Named parameter leaf; gradients are harvested per name after backward.
  Val param(const std::string& name, const Tensor& value) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return Val{this, it->second};
    Val v = leaf(value, true);
    param_ids_[name] = v.id;
    return v;
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }

  Val make(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, const Tensor&)> back) {
    check_finite(value, "op");
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[p].requires_grad;
    nodes_.push_back(
        Node{std::move(value), Tensor(), rg ? std::move(back) : nullptr, rg});
    return Val{this, int(nodes_.size()) - 1};
  }

  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Tensor(n.value.rows(), n.value.cols());
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.at(i) += g.at(i);
  }

  // Backward from a scalar root; reverse creation order visits each node
  // exactly once.
  void backward(Val root) {
    if (root.v().size() != 1)
      throw std::logic_error("backward: root must be scalar");
    accumulate(root.id, Tensor::scalar(1.0));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
    }
  }

  // Sum harvested parameter gradients into `sink` (scaled), keyed by name.
  void harvest_grads(std::map<std::string, Tensor>& sink,
                     double scale = 1.0) const {
    for (const auto& [name, id] : param_ids_) {
      const Node& n = nodes_[id];
      auto it = sink.find(name);
      if (it == sink.end())
        it = sink.emplace(name, Tensor(n.value.rows(), n.value.cols())).first;
      if (n.grad.size() == 0) continue;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        it->second.at(i) += scale * n.grad.at(i);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  static void check_finite(const Tensor& t, const char* where) {
    if (!t.all_finite())
      throw std::runtime_error(std::string("non-finite value in ") + where);
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> param_ids_;
};

inline const Tensor& Val::v() const { return tape->value(id); }

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// C += A * B
inline void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  int m = a.rows(), k = a.cols(), n = b.cols();
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      double aik = ap[std::size_t(i) * k + l];
      if (aik == 0.0) continue;
      const double* brow = bp + std::size_t(l) * n;
      double* crow = cp + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += A * B^T
inline void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data() + std::size_t(i) * k;
    double* crow = c.data() + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data() + std::size_t(j) * k;
      double dot = 0.0;
      for (int l = 0; l < k; ++l) dot += arow[l] * brow[l];
      crow[j] += dot;
    }
  }
}

// C += A^T * B
inline void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  int m = a.cols(), k = a.rows(), n = b.cols();
  for (int i = 0; i < k; ++i) {
    const double* arow = a.data() + std::size_t(i) * m;
    const double* brow = b.data() + std::size_t(i) * n;
    for (int l = 0; l < m; ++l) {
      double ail = arow[l];
      if (ail == 0.0) continue;
      double* crow = c.data() + std::size_t(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
}

}  // namespace detail

// ---- elementwise and structural ops ----

inline Val add(Val a, Val b) {
  detail::require(a.v().same_shape(b.v()), "add: shape mismatch");
  Tensor out = a.v();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += b.v().at(i);
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        t.accumulate(ia, g);
                        t.accumulate(ib, g);
                      });
}

inline Val sub(Val a, Val b) {
  detail::require(a.v().same_shape(b.v()), "sub: shape mismatch");
  Tensor out = a.v();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= b.v().at(i);
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        t.accumulate(ia, g);
                        Tensor ng = g;
                        for (std::size_t i = 0; i < ng.size(); ++i)
                          ng.at(i) = -ng.at(i);
                        t.accumulate(ib, ng);
                      });
}

inline Val mul(Val a, Val b) {
  detail::require(a.v().same_shape(b.v()), "mul: shape mismatch");
  Tensor out = a.v();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= b.v().at(i);
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        const Tensor& bv = t.value(ib);
                        Tensor ga = g, gb = g;
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga.at(i) *= bv.at(i);
                          gb.at(i) *= av.at(i);
                        }
                        t.accumulate(ia, ga);
                        t.accumulate(ib, gb);
                      });
}

inline Val scale(Val a, double c) {
  Tensor out = a.v();
  for (auto& x : out.buffer()) x *= c;
  int ia = a.id;
  return a.tape->make(std::move(out), {ia}, [ia, c](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (auto& x : ga.buffer()) x *= c;
    t.accumulate(ia, ga);
  });
}

inline Val add_const(Val a, double c) {
  Tensor out = a.v();
  for (auto& x : out.buffer()) x += c;
  int ia = a.id;
  return a.tape->make(std::move(out), {ia},
                      [ia](Tape& t, const Tensor& g) { t.accumulate(ia, g); });
}

// A (m x n) + row vector b (1 x n), broadcast over rows.
inline Val add_rowvec(Val a, Val b) {
  detail::require(b.v().rows() == 1 && b.v().cols() == a.v().cols(),
                  "add_rowvec: want 1 x cols(a)");
  Tensor out = a.v();
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) += b.v()(0, j);
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        t.accumulate(ia, g);
                        Tensor gb(1, g.cols());
                        for (int i = 0; i < g.rows(); ++i)
                          for (int j = 0; j < g.cols(); ++j)
                            gb(0, j) += g(i, j);
                        t.accumulate(ib, gb);
                      });
}

// A (m x n) * row vector b (1 x n), broadcast over rows.
inline Val mul_rowvec(Val a, Val b) {
  detail::require(b.v().rows() == 1 && b.v().cols() == a.v().cols(),
                  "mul_rowvec: want 1 x cols(a)");
  Tensor out = a.v();
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) *= b.v()(0, j);
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        const Tensor& bv = t.value(ib);
                        Tensor ga = g;
                        Tensor gb(1, g.cols());
                        for (int i = 0; i < g.rows(); ++i)
                          for (int j = 0; j < g.cols(); ++j) {
                            ga(i, j) *= bv(0, j);
                            gb(0, j) += g(i, j) * av(i, j);
                          }
                        t.accumulate(ia, ga);
                        t.accumulate(ib, gb);
                      });
}

inline Val matmul(Val a, Val b) {
  detail::require(a.v().cols() == b.v().rows(), "matmul: inner dim mismatch");
  Tensor out(a.v().rows(), b.v().cols());
  detail::matmul_acc(out, a.v(), b.v());
  int ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        const Tensor& bv = t.value(ib);
                        Tensor ga(av.rows(), av.cols());
                        detail::matmul_nt_acc(ga, g, bv);  // g * B^T
                        t.accumulate(ia, ga);
                        Tensor gb(bv.rows(), bv.cols());
                        detail::matmul_tn_acc(gb, av, g);  // A^T * g
                        t.accumulate(ib, gb);
                      });
}

inline Val transpose(Val a) {
  const Tensor& av = a.v();
  Tensor out(av.cols(), av.rows());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  int ia = a.id;
  return a.tape->make(std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
    Tensor ga(g.cols(), g.rows());
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga(j, i) = g(i, j);
    t.accumulate(ia, ga);
  });
}

inline Val concat_cols(const std::vector<Val>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty");
  int rows = parts[0].v().rows();
  int cols = 0;
  for (const Val& p : parts) {
    detail::require(p.v().rows() == rows, "concat_cols: row mismatch");
    cols += p.v().cols();
  }
  Tensor out(rows, cols);
  std::vector<int> ids, offs;
  int off = 0;
  for (const Val& p : parts) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p.v().cols(); ++j) out(i, off + j) = p.v()(i, j);
    ids.push_back(p.id);
    offs.push_back(off);
    off += p.v().cols();
  }
  return parts[0].tape->make(
      std::move(out), ids, [ids, offs](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const Tensor& pv = t.value(ids[k]);
          Tensor gp(pv.rows(), pv.cols());
          for (int i = 0; i < pv.rows(); ++i)
            for (int j = 0; j < pv.cols(); ++j) gp(i, j) = g(i, offs[k] + j);
          t.accumulate(ids[k], gp);
        }
      });
}

inline Val concat_rows(const std::vector<Val>& parts) {
  detail::require(!parts.empty(), "concat_rows: empty");
  int cols = parts[0].v().cols();
  int rows = 0;
  for (const Val& p : parts) {
    detail::require(p.v().cols() == cols, "concat_rows: col mismatch");
    rows += p.v().rows();
  }
  Tensor out(rows, cols);
  std::vector<int> ids, offs;
  int off = 0;
  for (const Val& p : parts) {
    for (int i = 0; i < p.v().rows(); ++i)
      for (int j = 0; j < cols; ++j) out(off + i, j) = p.v()(i, j);
    ids.push_back(p.id);
    offs.push_back(off);
    off += p.v().rows();
  }
  return parts[0].tape->make(
      std::move(out), ids, [ids, offs](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const Tensor& pv = t.value(ids[k]);
          Tensor gp(pv.rows(), pv.cols());
          for (int i = 0; i < pv.rows(); ++i)
            for (int j = 0; j < pv.cols(); ++j) gp(i, j) = g(offs[k] + i, j);
          t.accumulate(ids[k], gp);
        }
      });
}

inline Val slice_rows(Val a, int r0, int r1) {
  detail::require(0 <= r0 && r0 <= r1 && r1 <= a.v().rows(),
                  "slice_rows: bad range");
  Tensor out(r1 - r0, a.v().cols());
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < a.v().cols(); ++j) out(i - r0, j) = a.v()(i, j);
  int ia = a.id;
  return a.tape->make(std::move(out), {ia},
                      [ia, r0](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        Tensor ga(av.rows(), av.cols());
                        for (int i = 0; i < g.rows(); ++i)
                          for (int j = 0; j < g.cols(); ++j)
                            ga(r0 + i, j) = g(i, j);
                        t.accumulate(ia, ga);
                      });
}

inline Val slice_cols(Val a, int c0, int c1) {
  detail::require(0 <= c0 && c0 <= c1 && c1 <= a.v().cols(),
                  "slice_cols: bad range");
  Tensor out(a.v().rows(), c1 - c0);
  for (int i = 0; i < a.v().rows(); ++i)
    for (int j = c0; j < c1; ++j) out(i, j - c0) = a.v()(i, j);
  int ia = a.id;
  return a.tape->make(std::move(out), {ia},
                      [ia, c0](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        Tensor ga(av.rows(), av.cols());
                        for (int i = 0; i < g.rows(); ++i)
                          for (int j = 0; j < g.cols(); ++j)
                            ga(i, c0 + j) = g(i, j);
                        t.accumulate(ia, ga);
                      });
}

inline Val exp(Val a) {
  Tensor out = a.v();
  for (auto& x : out.buffer()) x = std::exp(x);
  int ia = a.id;
  Tensor kept = out;
  return a.tape->make(std::move(out), {ia},
                      [ia, kept](Tape& t, const Tensor& g) {
                        Tensor ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i)
                          ga.at(i) *= kept.at(i);
                        t.accumulate(ia, ga);
                      });
}

inline Val log(Val a) {
  Tensor out = a.v();
  for (auto& x : out.buffer()) x = std::log(x);
  int ia = a.id;
  return a.tape->make(std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) /= av.at(i);
    t.accumulate(ia, ga);
  });
}

inline Val tanh(Val a) {
  Tensor out = a.v();
  for (auto& x : out.buffer()) x = std::tanh(x);
  int ia = a.id;
  Tensor kept = out;
  return a.tape->make(std::move(out), {ia},
                      [ia, kept](Tape& t, const Tensor& g) {
                        Tensor ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i)
                          ga.at(i) *= 1.0 - kept.at(i) * kept.at(i);
                        t.accumulate(ia, ga);
                      });
}

// log(1 + exp(x)), numerically stable; derivative is the logistic function.
inline Val softplus(Val a) {
  Tensor out = a.v();
  for (auto& x : out.buffer())
    x = x > 30.0 ? x : std::log1p(std::exp(x));
  int ia = a.id;
  return a.tape->make(std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double x = av.at(i);
      double s = x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      ga.at(i) *= s;
    }
    t.accumulate(ia, ga);
  });
}

// Row-wise softmax (axis = columns within each row), max-shifted.
inline Val softmax_rows(Val a) {
  Tensor out = a.v();
  for (int i = 0; i < out.rows(); ++i) {
    double mx = out(i, 0);
    for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, out(i, j));
    double sum = 0.0;
    for (int j = 0; j < out.cols(); ++j) {
      out(i, j) = std::exp(out(i, j) - mx);
      sum += out(i, j);
    }
    for (int j = 0; j < out.cols(); ++j) out(i, j) /= sum;
  }
  int ia = a.id;
  Tensor kept = out;
  return a.tape->make(std::move(out), {ia},
                      [ia, kept](Tape& t, const Tensor& g) {
                        Tensor ga(g.rows(), g.cols());
                        for (int i = 0; i < g.rows(); ++i) {
                          double dot = 0.0;
                          for (int j = 0; j < g.cols(); ++j)
                            dot += g(i, j) * kept(i, j);
                          for (int j = 0; j < g.cols(); ++j)
                            ga(i, j) = kept(i, j) * (g(i, j) - dot);
                        }
                        t.accumulate(ia, ga);
                      });
}

// Row-wise layer normalization (mean 0, variance 1 across columns).
// Affine gain/bias are composed separately with mul_rowvec/add_rowvec.
inline Val layer_norm_rows(Val a, double eps = 1e-6) {
  const Tensor& av = a.v();
  int n = av.cols();
  Tensor out(av.rows(), n);
  Tensor inv_sd(av.rows(), 1);
  for (int i = 0; i < av.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += av(i, j);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = av(i, j) - mean;
      var += d * d;
    }
    var /= n;
    double isd = 1.0 / std::sqrt(var + eps);
    inv_sd(i, 0) = isd;
    for (int j = 0; j < n; ++j) out(i, j) = (av(i, j) - mean) * isd;
  }
  int ia = a.id;
  Tensor xhat = out;
  return a.tape->make(
      std::move(out), {ia}, [ia, xhat, inv_sd, n](Tape& t, const Tensor& g) {
        Tensor ga(g.rows(), g.cols());
        for (int i = 0; i < g.rows(); ++i) {
          double gmean = 0.0, gxhat = 0.0;
          for (int j = 0; j < n; ++j) {
            gmean += g(i, j);
            gxhat += g(i, j) * xhat(i, j);
          }
          gmean /= n;
          gxhat /= n;
          for (int j = 0; j < n; ++j)
            ga(i, j) =
                inv_sd(i, 0) * (g(i, j) - gmean - xhat(i, j) * gxhat);
        }
        t.accumulate(ia, ga);
      });
}

// Rows of `table` selected by integer indices (for clock-hour embeddings).
inline Val embedding_lookup(Val table, const std::vector<int>& indices) {
  const Tensor& tv = table.v();
  Tensor out(int(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] >= 0 && indices[i] < tv.rows(),
                    "embedding_lookup: index out of range");
    for (int j = 0; j < tv.cols(); ++j) out(int(i), j) = tv(indices[i], j);
  }
  int it = table.id;
  return table.tape->make(std::move(out), {it},
                          [it, indices](Tape& t, const Tensor& g) {
                            const Tensor& tv = t.value(it);
                            Tensor gt(tv.rows(), tv.cols());
                            for (std::size_t i = 0; i < indices.size(); ++i)
                              for (int j = 0; j < tv.cols(); ++j)
                                gt(indices[i], j) += g(int(i), j);
                            t.accumulate(it, gt);
                          });
}

// Where mask is true the output takes `fill_value` (no gradient flows there);
// elsewhere it passes `a` through.
inline Val masked_fill(Val a, const std::vector<bool>& mask,
                       double fill_value) {
  detail::require(mask.size() == a.v().size(), "masked_fill: size mismatch");
  Tensor out = a.v();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out.at(i) = fill_value;
  int ia = a.id;
  return a.tape->make(std::move(out), {ia},
                      [ia, mask](Tape& t, const Tensor& g) {
                        Tensor ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i)
                          if (mask[i]) ga.at(i) = 0.0;
                        t.accumulate(ia, ga);
                      });
}

inline Val sum_all(Val a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v().size(); ++i) s += a.v().at(i);
  int ia = a.id;
  return a.tape->make(Tensor::scalar(s), {ia},
                      [ia](Tape& t, const Tensor& g) {
                        const Tensor& av = t.value(ia);
                        Tensor ga(av.rows(), av.cols(), g.item());
                        t.accumulate(ia, ga);
                      });
}

inline Val mean_all(Val a) {
  return scale(sum_all(a), 1.0 / double(a.v().size()));
}

inline Val operator+(Val a, Val b) { return add(a, b); }
inline Val operator-(Val a, Val b) { return sub(a, b); }
inline Val operator*(Val a, Val b) { return mul(a, b); }

// Max relative error between reverse-mode and central-difference gradients
// of a scalar-valued graph over every coordinate of `params`.
// f must rebuild its graph from scratch on each call.
inline double grad_check(
    const std::function<double(const std::map<std::string, Tensor>&)>& f_value,
    const std::function<void(const std::map<std::string, Tensor>&,
                             std::map<std::string, Tensor>&)>& f_grad,
    std::map<std::string, Tensor> params, double eps = 1e-5) {
  std::map<std::string, Tensor> grads;
  f_grad(params, grads);
  double worst = 0.0;
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double orig = p.at(i);
      p.at(i) = orig + eps;
      double fp = f_value(params);
      p.at(i) = orig - eps;
      double fm = f_value(params);
      p.at(i) = orig;
      double num = (fp - fm) / (2.0 * eps);
      double ana = g.at(i);
      double rel = std::fabs(ana - num) /
                   std::max(1.0, std::fabs(ana) + std::fabs(num));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace glyco
