#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records each primitive's output value together with a closure that
// propagates the output gradient to its inputs. Nodes are appended in
// evaluation order, so sweeping them in reverse is a valid topological order.
// Inputs that do not require gradients are never given a closure, which makes
// a tape built only from constants a cheap inference graph.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mazelab/tensor.hpp"

namespace mazelab {

class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class Tape {
 public:
  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  using GradHook = std::function<void(std::size_t node, Tensor<T>& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------------

  Var constant(Tensor<T> value) { return push(std::move(value), false); }

  // Borrowed value; the referenced tensor must outlive the tape.
  Var parameter(const Tensor<T>& value, bool requires_grad = true) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }
  // Gradient of the last backward() target; nullptr if none reached this node.
  const Tensor<T>* grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? nullptr : &n.grad;
  }
  const Tensor<T>& aux(Var v) const { return nodes_.at(v.id).aux; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Called on each node's incoming gradient just before it is propagated.
  void set_grad_hook(GradHook hook) { hook_ = std::move(hook); }

  void backward(Var out, T seed = T{1}) {
    Node& root = nodes_.at(out.id);
    if (value(out).numel() != 1) {
      throw ShapeError("backward requires a scalar output, got " + shape_str(value(out).shape()));
    }
    if (!root.requires_grad) return;
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_ref(out.id)[0] = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.back) continue;
      if (hook_) hook_(i, n.grad);
      n.back();
    }
  }

  // --- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape() != bv.shape()) throw ShapeError("add", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      if (needs(a)) axpy(grad_ref(a.id), g, T{1});
      if (needs(b)) axpy(grad_ref(b.id), g, T{1});
    });
  }

  // a[..., n] + bias[n]
  Var add_bias(Var a, Var bias) {
    const auto& av = value(a);
    const auto& bv = value(bias);
    if (bv.rank() != 1 || bv.dim(0) != av.cols()) throw ShapeError("add_bias", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    const std::size_t n = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r) {
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] + bv[j];
    }
    return record(std::move(out), {a, bias}, [this, a, bias](std::size_t self) {
      const auto& g = nodes_[self].grad;
      if (needs(a)) axpy(grad_ref(a.id), g, T{1});
      if (needs(bias)) {
        auto& gb = grad_ref(bias.id);
        const std::size_t n = gb.numel();
        for (std::size_t r = 0; r < g.numel() / n; ++r) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape() != bv.shape()) throw ShapeError("mul", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      if (needs(a)) {
        auto& ga = grad_ref(a.id);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
      }
      if (needs(b)) {
        auto& gb = grad_ref(b.id);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  // Broadcast multiply along the last axis: a[..., n] * gain[n].
  Var mul_bias(Var a, Var gain) {
    const auto& av = value(a);
    const auto& gv = value(gain);
    if (gv.rank() != 1 || gv.dim(0) != av.cols()) throw ShapeError("mul_bias", av.shape(), gv.shape());
    Tensor<T> out(av.shape());
    const std::size_t n = av.cols();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * gv[i % n];
    return record(std::move(out), {a, gain}, [this, a, gain](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& gv = value(gain);
      const std::size_t n = gv.numel();
      if (needs(a)) {
        auto& ga = grad_ref(a.id);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * gv[i % n];
      }
      if (needs(gain)) {
        auto& gg = grad_ref(gain.id);
        for (std::size_t i = 0; i < g.numel(); ++i) gg[i % n] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, T s) {
    const auto& av = value(a);
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
    return record(std::move(out), {a}, [this, a, s](std::size_t self) {
      axpy(grad_ref(a.id), nodes_[self].grad, s);
    });
  }

  // Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
  Var gelu(Var a) {
    const auto& av = value(a);
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = gelu_value(av[i]);
    return record(std::move(out), {a}, [this, a](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      auto& ga = grad_ref(a.id);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * gelu_grad(av[i]);
    });
  }

  static T gelu_value(T x) { return T{0.5} * x * (T{1} + std::erf(x * T{0.70710678118654752440})); }
  static T gelu_grad(T x) {
    const T cdf = T{0.5} * (T{1} + std::erf(x * T{0.70710678118654752440}));
    const T pdf = std::exp(T{-0.5} * x * x) * T{0.39894228040143267794};
    return cdf + x * pdf;
  }

  // --- linear algebra -------------------------------------------------------

  // a[..., k] @ b[k, n] -> [..., n]
  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (bv.rank() != 2 || av.rank() < 1 || av.cols() != bv.dim(0)) throw ShapeError("matmul", av.shape(), bv.shape());
    const auto m = static_cast<Eigen::Index>(av.rows());
    const auto k = static_cast<Eigen::Index>(bv.dim(0));
    const auto n = static_cast<Eigen::Index>(bv.dim(1));
    Shape s = av.shape();
    s.back() = bv.dim(1);
    Tensor<T> out(std::move(s));
    cmap(out.data(), m, n).noalias() = ccmap(av.data(), m, k) * ccmap(bv.data(), k, n);
    return record(std::move(out), {a, b}, [this, a, b, m, k, n](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto G = ccmap(g.data(), m, n);
      if (needs(a)) cmap(grad_ref(a.id).data(), m, k).noalias() += G * ccmap(value(b).data(), k, n).transpose();
      if (needs(b)) cmap(grad_ref(b.id).data(), k, n).noalias() += ccmap(value(a).data(), m, k).transpose() * G;
    });
  }

  // Batched: a[B, m, k] @ b[B, k, n] (or b[B, n, k] transposed) -> [B, m, n]
  Var bmm(Var a, Var b, bool transpose_b = false) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
        av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
      throw ShapeError("bmm", av.shape(), bv.shape());
    }
    const std::size_t batch = av.dim(0);
    const auto m = static_cast<Eigen::Index>(av.dim(1));
    const auto k = static_cast<Eigen::Index>(av.dim(2));
    const auto n = static_cast<Eigen::Index>(transpose_b ? bv.dim(1) : bv.dim(2));
    Tensor<T> out({batch, static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
    const std::size_t sa = static_cast<std::size_t>(m * k), sb = static_cast<std::size_t>(k * n),
                      sc = static_cast<std::size_t>(m * n);
    for (std::size_t i = 0; i < batch; ++i) {
      auto C = cmap(out.data() + i * sc, m, n);
      const auto A = ccmap(av.data() + i * sa, m, k);
      if (transpose_b) {
        C.noalias() = A * ccmap(bv.data() + i * sb, n, k).transpose();
      } else {
        C.noalias() = A * ccmap(bv.data() + i * sb, k, n);
      }
    }
    return record(std::move(out), {a, b}, [this, a, b, transpose_b, batch, m, k, n, sa, sb, sc](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      for (std::size_t i = 0; i < batch; ++i) {
        const auto G = ccmap(g.data() + i * sc, m, n);
        const auto A = ccmap(av.data() + i * sa, m, k);
        if (transpose_b) {
          const auto B = ccmap(bv.data() + i * sb, n, k);
          if (needs(a)) cmap(grad_ref(a.id).data() + i * sa, m, k).noalias() += G * B;
          if (needs(b)) cmap(grad_ref(b.id).data() + i * sb, n, k).noalias() += G.transpose() * A;
        } else {
          const auto B = ccmap(bv.data() + i * sb, k, n);
          if (needs(a)) cmap(grad_ref(a.id).data() + i * sa, m, k).noalias() += G * B.transpose();
          if (needs(b)) cmap(grad_ref(b.id).data() + i * sb, k, n).noalias() += A.transpose() * G;
        }
      }
    });
  }

  // Row gather: out[t] = table[ids[t]].
  Var embedding(Var table, std::span<const std::int32_t> ids) {
    const auto& tv = value(table);
    if (tv.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(tv.shape()));
    const std::size_t d = tv.dim(1);
    Tensor<T> out({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= tv.dim(0)) {
        throw std::invalid_argument("embedding id " + std::to_string(ids[t]) + " outside table of " +
                                    std::to_string(tv.dim(0)) + " rows");
      }
      std::copy_n(tv.data() + static_cast<std::size_t>(ids[t]) * d, d, out.data() + t * d);
    }
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    return record(std::move(out), {table}, [this, table, kept = std::move(kept), d](std::size_t self) {
      const auto& g = nodes_[self].grad;
      auto& gt = grad_ref(table.id);
      for (std::size_t t = 0; t < kept.size(); ++t) {
        T* dst = gt.data() + static_cast<std::size_t>(kept[t]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[t * d + j];
      }
    });
  }

  // --- attention helpers ----------------------------------------------------

  // x[T, H*dh] -> [H, T, dh]
  Var split_heads(Var x, std::size_t heads) {
    const auto& xv = value(x);
    if (xv.rank() != 2 || heads == 0 || xv.dim(1) % heads != 0) {
      throw ShapeError("split_heads: cannot split " + shape_str(xv.shape()) + " into " + std::to_string(heads) + " heads");
    }
    const std::size_t len = xv.dim(0), dh = xv.dim(1) / heads;
    Tensor<T> out({heads, len, dh});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < len; ++t)
        std::copy_n(xv.data() + t * heads * dh + h * dh, dh, out.data() + (h * len + t) * dh);
    return record(std::move(out), {x}, [this, x, heads, len, dh](std::size_t self) {
      const auto& g = nodes_[self].grad;
      auto& gx = grad_ref(x.id);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < dh; ++j) gx[t * heads * dh + h * dh + j] += g[(h * len + t) * dh + j];
    });
  }

  // [H, T, dh] -> [T, H*dh]
  Var merge_heads(Var x) {
    const auto& xv = value(x);
    if (xv.rank() != 3) throw ShapeError("merge_heads expects [H,T,dh], got " + shape_str(xv.shape()));
    const std::size_t heads = xv.dim(0), len = xv.dim(1), dh = xv.dim(2);
    Tensor<T> out({len, heads * dh});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < len; ++t)
        std::copy_n(xv.data() + (h * len + t) * dh, dh, out.data() + t * heads * dh + h * dh);
    return record(std::move(out), {x}, [this, x, heads, len, dh](std::size_t self) {
      const auto& g = nodes_[self].grad;
      auto& gx = grad_ref(x.id);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < dh; ++j) gx[(h * len + t) * dh + j] += g[t * heads * dh + h * dh + j];
    });
  }

  // Row softmax of scores[H, T, T] over keys j <= i with key_valid[j].
  // Rows without any admissible key are all-zero.
  Var causal_softmax(Var scores, std::span<const std::uint8_t> key_valid = {}) {
    const auto& sv = value(scores);
    if (sv.rank() != 3 || sv.dim(1) != sv.dim(2)) throw ShapeError("causal_softmax expects [H,T,T], got " + shape_str(sv.shape()));
    const std::size_t heads = sv.dim(0), len = sv.dim(1);
    if (!key_valid.empty() && key_valid.size() != len) throw ShapeError("causal_softmax: key mask length mismatch");
    Tensor<T> out(sv.shape());
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        const T* s = sv.data() + (h * len + i) * len;
        T* p = out.data() + (h * len + i) * len;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j)
          if (key_valid.empty() || key_valid[j]) mx = std::max(mx, s[j]);
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T total = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          if (key_valid.empty() || key_valid[j]) {
            p[j] = std::exp(s[j] - mx);
            total += p[j];
          }
        }
        for (std::size_t j = 0; j <= i; ++j) p[j] /= total;
      }
    }
    return record(std::move(out), {scores}, [this, scores, heads, len](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& p = nodes_[self].owned;
      auto& gs = grad_ref(scores.id);
      for (std::size_t r = 0; r < heads * len; ++r) {
        const std::size_t i = r % len;
        const T* pr = p.data() + r * len;
        const T* gr = g.data() + r * len;
        T dot = 0;
        for (std::size_t j = 0; j <= i; ++j) dot += pr[j] * gr[j];
        for (std::size_t j = 0; j <= i; ++j) gs[r * len + j] += pr[j] * (gr[j] - dot);
      }
    });
  }

  // --- normalisation --------------------------------------------------------

  // Normalises over the last axis. aux() of the result holds [rows, 2] =
  // (mean, sqrt(var + eps)) per row.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T{1e-5}) {
    const auto& xv = value(x);
    const std::size_t n = xv.cols(), rows = xv.rows();
    if (value(gain).numel() != n || value(bias).numel() != n) throw ShapeError("layer_norm", xv.shape(), value(gain).shape());
    const auto& gv = value(gain);
    const auto& bv = value(bias);
    Tensor<T> out(xv.shape());
    Tensor<T> stats({rows, 2});
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * n;
      T mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<T>(n);
      const T sd = std::sqrt(var + eps);
      stats[2 * r] = mean;
      stats[2 * r + 1] = sd;
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = gv[j] * ((xr[j] - mean) / sd) + bv[j];
    }
    Var v = record(std::move(out), {x, gain, bias}, [this, x, gain, bias, n, rows](std::size_t self) {
      const auto& g = nodes_[self].grad;
      const auto& st = nodes_[self].aux;
      const auto& xv = value(x);
      const auto& gv = value(gain);
      std::vector<T> xhat(n), dxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        const T mean = st[2 * r], sd = st[2 * r + 1];
        const T* gr = g.data() + r * n;
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < n; ++j) {
          xhat[j] = (xv[r * n + j] - mean) / sd;
          dxhat[j] = gr[j] * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xhat[j];
        }
        m1 /= static_cast<T>(n);
        m2 /= static_cast<T>(n);
        if (needs(x)) {
          auto& gx = grad_ref(x.id);
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (dxhat[j] - m1 - xhat[j] * m2) / sd;
        }
        if (needs(gain)) {
          auto& gg = grad_ref(gain.id);
          for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xhat[j];
        }
        if (needs(bias)) {
          auto& gb = grad_ref(bias.id);
          for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
        }
      }
    });
    nodes_[v.id].aux = std::move(stats);
    return v;
  }

  // --- losses ---------------------------------------------------------------

  // Mean NLL over rows with mask[t] != 0. Masked rows get zero gradient.
  Var cross_entropy_masked(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
    const auto& lv = value(logits);
    const std::size_t rows = lv.rows(), vocab = lv.cols();
    if (targets.size() != rows || mask.size() != rows) {
      throw ShapeError("cross_entropy_masked: " + std::to_string(rows) + " logit rows but " +
                       std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) + " mask entries");
    }
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) throw DegenerateBatchError("cross_entropy_masked: loss mask selects no positions");
    Tensor<T> probs({rows, vocab});
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!mask[r]) continue;
      if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
        throw std::invalid_argument("target id " + std::to_string(targets[r]) + " outside vocabulary");
      }
      const T lse = softmax_row(lv.data() + r * vocab, probs.data() + r * vocab, vocab);
      total += lse - lv[r * vocab + static_cast<std::size_t>(targets[r])];
    }
    Tensor<T> out(Shape{}, std::vector<T>{total / static_cast<T>(count)});
    std::vector<std::int32_t> tk(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    return record(std::move(out), {logits},
                  [this, logits, tk = std::move(tk), mk = std::move(mk), probs = std::move(probs), count, vocab](std::size_t self) {
                    const T g = nodes_[self].grad[0] / static_cast<T>(count);
                    auto& gl = grad_ref(logits.id);
                    for (std::size_t r = 0; r < mk.size(); ++r) {
                      if (!mk[r]) continue;
                      for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += g * probs[r * vocab + j];
                      gl[r * vocab + static_cast<std::size_t>(tk[r])] -= g;
                    }
                  });
  }

  // Mean over rows of -sum_j p_j log softmax(logits)_j (cross entropy to a
  // fixed target distribution; KL up to the target's entropy).
  Var soft_cross_entropy(Var logits, const Tensor<T>& target_probs) {
    const auto& lv = value(logits);
    if (lv.shape() != target_probs.shape()) throw ShapeError("soft_cross_entropy", lv.shape(), target_probs.shape());
    const std::size_t rows = lv.rows(), vocab = lv.cols();
    Tensor<T> probs({rows, vocab});
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const T lse = softmax_row(lv.data() + r * vocab, probs.data() + r * vocab, vocab);
      for (std::size_t j = 0; j < vocab; ++j) total -= target_probs[r * vocab + j] * (lv[r * vocab + j] - lse);
    }
    Tensor<T> out(Shape{}, std::vector<T>{total / static_cast<T>(rows)});
    return record(std::move(out), {logits}, [this, logits, probs = std::move(probs), target = target_probs, rows](std::size_t self) {
      const T g = nodes_[self].grad[0] / static_cast<T>(rows);
      auto& gl = grad_ref(logits.id);
      for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] += g * (probs[i] - target[i]);
    });
  }

  // Mean over rows of the squared distance to a fixed target.
  Var mean_squared_error(Var a, const Tensor<T>& target) {
    const auto& av = value(a);
    if (av.shape() != target.shape()) throw ShapeError("mean_squared_error", av.shape(), target.shape());
    T total = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) total += (av[i] - target[i]) * (av[i] - target[i]);
    const std::size_t rows = std::max<std::size_t>(1, av.rows());
    Tensor<T> out(Shape{}, std::vector<T>{total / static_cast<T>(rows)});
    return record(std::move(out), {a}, [this, a, target, rows](std::size_t self) {
      const T g = nodes_[self].grad[0] * T{2} / static_cast<T>(rows);
      const auto& av = value(a);
      auto& ga = grad_ref(a.id);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * (av[i] - target[i]);
    });
  }

  Var sum(Var a) {
    const auto& av = value(a);
    T total = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) total += av[i];
    return record(Tensor<T>(Shape{}, std::vector<T>{total}), {a}, [this, a](std::size_t self) {
      const T g = nodes_[self].grad[0];
      auto& ga = grad_ref(a.id);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  }

  // Writes softmax of a row into out and returns its log-sum-exp.
  static T softmax_row(const T* logits, T* out, std::size_t n) {
    T mx = logits[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(logits[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
    return mx + std::log(total);
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T> aux;
    bool requires_grad = false;
    std::function<void()> back;
  };

  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static Eigen::Map<RowMat> cmap(T* p, Eigen::Index r, Eigen::Index c) { return {p, r, c}; }
  static Eigen::Map<const RowMat> ccmap(const T* p, Eigen::Index r, Eigen::Index c) { return {p, r, c}; }

  static void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha) {
    for (std::size_t i = 0; i < src.numel(); ++i) dst[i] += alpha * src[i];
  }

  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Tensor<T>& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.external ? n.external->shape() : n.owned.shape());
    return n.grad;
  }

  Var push(Tensor<T> value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  template <class F>
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, F&& back) {
    bool any = false;
    for (Var v : inputs) any = any || nodes_[v.id].requires_grad;
    Var out = push(std::move(value), any);
    if (any) {
      const std::size_t self = out.id;
      nodes_[self].back = [fn = std::forward<F>(back), self]() { fn(self); };
    }
    return out;
  }

  std::vector<Node> nodes_;
  GradHook hook_;
};

}  // namespace mazelab
