// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "droprate/dropout.hpp"
#include "droprate/params.hpp"
#include "droprate/rng.hpp"
#include "droprate/tensor.hpp"

namespace droprate {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Reverse-mode tape. Operations append nodes in evaluation order; backward()
/// walks them in reverse, accumulating into node gradients and, for parameter
/// leaves, straight into the owning ParamStore's gradient buffers.
///
/// A tape built with grad_enabled = false records values only.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var param(BasicParamStore<T>& store, std::size_t index) {
    Node n;
    n.ref = &store.value(index);
    n.store = &store;
    n.param_index = index;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    if (grad_enabled_ && std::find(stores_.begin(), stores_.end(), &store) == stores_.end())
      stores_.push_back(&store);
    return {nodes_.size() - 1};
  }

  Var constant(BasicTensor<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Appends an op result. `backward` is kept only if some input needs a gradient.
  Var record(BasicTensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
      for (Var v : inputs) n.requires_grad = n.requires_grad || node(v).requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const BasicTensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.value;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  BasicTensor<T>& grad(Var v) {
    Node& n = node(v);
    if (n.store) return n.store->grad(n.param_index);
    if (n.grad.empty()) n.grad = BasicTensor<T>(value(v).shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (!grad_enabled_) throw StateError("backward on a tape recorded without gradients");
    if (!loss.valid() || loss.id >= nodes_.size()) throw StateError("backward before forward: loss not on tape");
    if (done_) throw StateError("backward already ran on this tape");
    if (value(loss).size() != 1) throw StateError("backward needs a scalar loss, got " + value(loss).shape().str());
    if (!node(loss).requires_grad) throw StateError("loss does not depend on any parameter");
    grad(loss)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, Var{i});
    }
    for (auto* s : stores_) s->mark_grads_ready(true);
    done_ = true;
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    const BasicTensor<T>* ref = nullptr;
    BasicParamStore<T>* store = nullptr;
    std::size_t param_index = 0;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable not recorded on this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable not recorded on this tape");
    return nodes_[v.id];
  }

  bool grad_enabled_;
  bool done_ = false;
  std::deque<Node> nodes_;
  std::vector<BasicParamStore<T>*> stores_;
};


// ---------------------------------------------------------------------------
// Differentiable operations. Each records its forward value and a closure that
// adds its contribution to the inputs' gradients.

namespace detail {

template <class T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape s) {
  return tape.record(tape.value(x).reshaped(s), {x}, [x](Tape<T>& t, Var self) {
    auto& gx = t.grad(x);
    const auto& gy = t.grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  return tape.record(add(tape.value(a), tape.value(b)), {a, b}, [a, b](Tape<T>& t, Var self) {
    const auto& gy = t.grad(self);
    if (t.requires_grad(a)) detail::accumulate(t.grad(a), gy);
    if (t.requires_grad(b)) detail::accumulate(t.grad(b), gy);
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T s) {
  return tape.record(scale(tape.value(a), s), {a}, [a, s](Tape<T>& t, Var self) {
    const auto& gy = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * gy[i];
  });
}

/// Sum of all elements -> shape [1].
template <class T>
Var sum(Tape<T>& tape, Var a) {
  double acc = 0.0;
  for (T v : tape.value(a).storage()) acc += v;
  return tape.record(BasicTensor<T>({1}, static_cast<T>(acc)), {a}, [a](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(a).storage()) v += g;
  });
}

template <class T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  BasicTensor<T> y = matmul(tape.value(a), tape.value(b));
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, Var self) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const auto& gy = t.grad(self);
    const std::size_t m = av.shape().rows(), k = bv.dim(0), n = bv.dim(1);
    if (t.requires_grad(a))
      kernels::gemm<T>(false, true, m, k, n, T(1), gy.data(), n, bv.data(), n, T(1), t.grad(a).data(), k);
    if (t.requires_grad(b))
      kernels::gemm<T>(true, false, k, n, m, T(1), av.data(), k, gy.data(), n, T(1), t.grad(b).data(), n);
  });
}

/// x [..., in] * w [in, out] + bias [out].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(bias);
  if (wv.rank() != 2 || xv.shape().back() != wv.dim(0) || bv.size() != wv.dim(1)) {
    throw DimensionError("linear: input " + xv.shape().str() + ", weight " + wv.shape().str() + ", bias " +
                         bv.shape().str());
  }
  const std::size_t m = xv.shape().rows(), k = wv.dim(0), n = wv.dim(1);
  BasicTensor<T> y({m, n});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(bv.data(), n, y.data() + r * n);
  kernels::gemm<T>(false, false, m, n, k, T(1), xv.data(), k, wv.data(), n, T(1), y.data(), n);
  if (xv.rank() == 3) y = std::move(y).reshaped({xv.dim(0), xv.dim(1), n});
  return tape.record(std::move(y), {x, w, bias}, [x, w, bias, m, k, n](Tape<T>& t, Var self) {
    const auto& gy = t.grad(self);
    if (t.requires_grad(x))
      kernels::gemm<T>(false, true, m, k, n, T(1), gy.data(), n, t.value(w).data(), n, T(1), t.grad(x).data(), k);
    if (t.requires_grad(w))
      kernels::gemm<T>(true, false, k, n, m, T(1), t.value(x).data(), k, gy.data(), n, T(1), t.grad(w).data(), n);
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
    }
  });
}

/// x [M, K] * w[N, K]^T -> [M, N]; used for the tied output head.
template <class T>
Var matmul_nt(Tape<T>& tape, Var x, Var w) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  if (wv.rank() != 2 || xv.shape().back() != wv.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + xv.shape().str() + " and " + wv.shape().str());
  }
  const std::size_t m = xv.shape().rows(), k = wv.dim(1), n = wv.dim(0);
  BasicTensor<T> y({m, n});
  kernels::gemm<T>(false, true, m, n, k, T(1), xv.data(), k, wv.data(), k, T(0), y.data(), n);
  return tape.record(std::move(y), {x, w}, [x, w, m, k, n](Tape<T>& t, Var self) {
    const auto& gy = t.grad(self);
    if (t.requires_grad(x))
      kernels::gemm<T>(false, false, m, k, n, T(1), gy.data(), n, t.value(w).data(), k, T(1), t.grad(x).data(), k);
    if (t.requires_grad(w))
      kernels::gemm<T>(true, false, n, k, m, T(1), gy.data(), n, t.value(x).data(), k, T(1), t.grad(w).data(), k);
  });
}

template <class T>
Var gelu(Tape<T>& tape, Var a) {
  if (!tape.requires_grad(a)) return tape.record(gelu(tape.value(a)), {a}, {});
  // The forward CDF is kept so backward needs no second erf.
  const auto& av = tape.value(a);
  BasicTensor<T> y(av.shape());
  std::vector<T> cdf(av.size());
  kernels::gelu(av.data(), y.data(), cdf.data(), av.size());
  return tape.record(std::move(y), {a}, [a, cdf = std::move(cdf)](Tape<T>& t, Var self) {
    const auto& av = t.value(a);
    const T* gy = t.grad(self).data();
    T* ga = t.grad(a).data();
    std::vector<T> pdf(av.size());
    kernels::normal_pdf(av.data(), pdf.data(), av.size());
    for (std::size_t i = 0; i < pdf.size(); ++i) ga[i] += gy[i] * (cdf[i] + av[i] * pdf[i]);
  });
}

template <class T>
Var softmax_lastdim(Tape<T>& tape, Var x) {
  return tape.record(softmax_lastdim(tape.value(x)), {x}, [x](Tape<T>& t, Var self) {
    const auto& y = t.value(self);
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    const std::size_t n = y.shape().back();
    for (std::size_t r = 0; r < y.shape().rows(); ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(gy[o + j]) * y[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += static_cast<T>(y[o + j] * (gy[o + j] - dot));
    }
  });
}

template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias) {
  std::vector<T> mean, rstd;
  BasicTensor<T> y = layer_norm(tape.value(x), tape.value(gain), tape.value(bias), &mean, &rstd);
  return tape.record(std::move(y), {x, gain, bias},
                     [x, gain, bias, mean = std::move(mean), rstd = std::move(rstd)](Tape<T>& t, Var self) {
    const auto& xv = t.value(x);
    const auto& g = t.value(gain);
    const auto& gy = t.grad(self);
    const std::size_t c = xv.shape().back(), rows = xv.shape().rows();
    const bool need_x = t.requires_grad(x), need_g = t.requires_grad(gain), need_b = t.requires_grad(bias);
    T* gx = need_x ? t.grad(x).data() : nullptr;
    T* gg = need_g ? t.grad(gain).data() : nullptr;
    T* gb = need_b ? t.grad(bias).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * c;
      const T* dy = gy.data() + r * c;
      const double mu = mean[r], rs = rstd[r];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double xhat = (xr[j] - mu) * rs;
        const double dxhat = static_cast<double>(dy[j]) * g[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (gg) gg[j] += static_cast<T>(dy[j] * xhat);
        if (gb) gb[j] += dy[j];
      }
      if (!gx) continue;
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        const double xhat = (xr[j] - mu) * rs;
        const double dxhat = static_cast<double>(dy[j]) * g[j];
        gx[r * c + j] += static_cast<T>(rs * (dxhat - sum_dxhat * inv_c - xhat * sum_dxhat_xhat * inv_c));
      }
    }
  });
}

template <class T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::int32_t> ids) {
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return tape.record(embedding_lookup(tape.value(table), ids), {table},
                     [table, saved = std::move(saved)](Tape<T>& t, Var self) {
    const auto& gy = t.grad(self);
    auto& gt = t.grad(table);
    const std::size_t c = gt.dim(1);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = gt.data() + static_cast<std::size_t>(saved[i]) * c;
      const T* src = gy.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

/// Mean cross-entropy in nats -> shape [1].
template <class T>
Var cross_entropy_mean(Tape<T>& tape, Var logits, std::span<const std::int32_t> targets) {
  BasicTensor<T> probs;
  const double loss = cross_entropy_mean(tape.value(logits), targets, tape.grad_enabled() ? &probs : nullptr);
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return tape.record(BasicTensor<T>({1}, static_cast<T>(loss)), {logits},
                     [logits, probs = std::move(probs), saved = std::move(saved)](Tape<T>& t, Var self) {
    const double g = static_cast<double>(t.grad(self)[0]) / static_cast<double>(saved.size());
    auto& gl = t.grad(logits);
    const std::size_t v = gl.shape().back();
    for (std::size_t r = 0; r < saved.size(); ++r) {
      for (std::size_t j = 0; j < v; ++j) {
        const double onehot = static_cast<std::size_t>(saved[r]) == j ? 1.0 : 0.0;
        gl[r * v + j] += static_cast<T>(g * (probs[r * v + j] - onehot));
      }
    }
  });
}

/// Inverted dropout on the tape. With p == 0 or training == false the input
/// node is returned as is: nothing is recorded and no randomness is drawn.
template <class T>
Var dropout(Tape<T>& tape, Var x, double p, bool training, RngState& rng) {
  validate_rate(p);
  if (!training || p == 0.0) return x;
  std::vector<std::uint8_t> keep;
  BasicTensor<T> y = dropout(tape.value(x), p, training, rng, &keep);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  return tape.record(std::move(y), {x}, [x, s, keep = std::move(keep)](Tape<T>& t, Var self) {
    const T* gy = t.grad(self).data();
    T* gx = t.grad(x).data();
    const std::uint8_t* k = keep.data();
    for (std::size_t i = 0, n = keep.size(); i < n; ++i) gx[i] += gy[i] * (static_cast<T>(k[i]) * s);
  });
}

/// Multi-head causal self-attention core.
///
/// `qkv` is [batch*seq, 3*C] holding query, key and value blocks side by side;
/// head h reads columns [h*hd, (h+1)*hd) of each block. Returns [batch*seq, C]
/// with heads concatenated. Attention probabilities are dropped out after the
/// softmax with rate `p` when training.
template <class T>
Var causal_self_attention(Tape<T>& tape, Var qkv, std::size_t batch, std::size_t seq, std::size_t n_head,
                          double p, bool training, RngState& rng) {
  validate_rate(p);
  const auto& in = tape.value(qkv);
  if (in.rank() != 2 || in.dim(0) != batch * seq || in.dim(1) % (3 * n_head) != 0) {
    throw DimensionError("causal_self_attention: qkv " + in.shape().str() + " for batch " + std::to_string(batch) +
                         ", seq " + std::to_string(seq) + ", heads " + std::to_string(n_head));
  }
  const std::size_t c = in.dim(1) / 3, hd = c / n_head, ld = 3 * c;
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const bool use_dropout = training && p > 0.0;
  const DropoutMask mask = use_dropout ? DropoutMask(rng.block_key(), p) : DropoutMask();
  const T keep_scale = static_cast<T>(use_dropout ? 1.0 / (1.0 - p) : 1.0);

  // Saved softmax probabilities, [batch, head, seq, seq], zero above the diagonal.
  BasicTensor<T> probs({batch * n_head, seq, seq});
  BasicTensor<T> out({batch * seq, c});
  std::vector<T> dropped(use_dropout ? seq * seq : 0);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_head; ++h) {
      const T* q = in.data() + b * seq * ld + h * hd;
      const T* k = q + c;
      const T* v = q + 2 * c;
      T* pr = probs.data() + (b * n_head + h) * seq * seq;
      kernels::gemm<T>(false, true, seq, seq, hd, attn_scale, q, ld, k, ld, T(0), pr, seq);
      for (std::size_t i = 0; i < seq; ++i) {
        T* row = pr + i * seq;
        kernels::softmax_row(row, i + 1);
        std::fill(row + i + 1, row + seq, T(0));
      }
      const T* weights = pr;
      if (use_dropout) {
        const std::uint64_t base = (b * n_head + h) * seq * seq;
        for (std::size_t e = 0; e < seq * seq; ++e)
          dropped[e] = pr[e] * (static_cast<T>(mask.keep(base + e)) * keep_scale);
        weights = dropped.data();
      }
      kernels::gemm<T>(false, false, seq, hd, seq, T(1), weights, seq, v, ld, T(0), out.data() + b * seq * c + h * hd, c);
    }
  }

  return tape.record(std::move(out), {qkv},
                     [qkv, batch, seq, n_head, c, hd, ld, attn_scale, use_dropout, mask, keep_scale,
                      probs = std::move(probs)](Tape<T>& t, Var self) {
    const auto& in = t.value(qkv);
    const auto& gy = t.grad(self);
    auto& gin = t.grad(qkv);
    std::vector<T> weights(seq * seq), dw(seq * seq);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < n_head; ++h) {
        const std::size_t off = b * seq * ld + h * hd;
        const T* q = in.data() + off;
        const T* k = q + c;
        const T* v = q + 2 * c;
        T* gq = gin.data() + off;
        T* gk = gq + c;
        T* gv = gq + 2 * c;
        const T* dy = gy.data() + b * seq * c + h * hd;
        const T* pr = probs.data() + (b * n_head + h) * seq * seq;
        const std::uint64_t base = (b * n_head + h) * seq * seq;
        if (use_dropout) {
          for (std::size_t e = 0; e < seq * seq; ++e)
            weights[e] = pr[e] * (static_cast<T>(mask.keep(base + e)) * keep_scale);
        } else {
          std::copy(pr, pr + seq * seq, weights.begin());
        }
        // dV += W^T dY ; dW = dY V^T
        kernels::gemm<T>(true, false, seq, hd, seq, T(1), weights.data(), seq, dy, c, T(1), gv, ld);
        kernels::gemm<T>(false, true, seq, seq, hd, T(1), dy, c, v, ld, T(0), dw.data(), seq);
        // Back through dropout and softmax (in place: dw becomes dS).
        for (std::size_t i = 0; i < seq; ++i) {
          T* drow = dw.data() + i * seq;
          const T* prow = pr + i * seq;
          if (use_dropout) {
            for (std::size_t j = 0; j <= i; ++j)
              drow[j] *= static_cast<T>(mask.keep(base + i * seq + j)) * keep_scale;
          }
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dot += static_cast<double>(drow[j]) * prow[j];
          for (std::size_t j = 0; j <= i; ++j) drow[j] = static_cast<T>(prow[j] * (drow[j] - dot));
          std::fill(drow + i + 1, drow + seq, T(0));
        }
        kernels::gemm<T>(false, false, seq, hd, seq, attn_scale, dw.data(), seq, k, ld, T(1), gq, ld);
        kernels::gemm<T>(true, false, seq, hd, seq, attn_scale, dw.data(), seq, q, ld, T(1), gk, ld);
      }
    }
  });
}

}  // namespace droprate
