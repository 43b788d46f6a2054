// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "droprate/params.hpp"

namespace droprate {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// Rank-1 parameters (biases, layer-norm gains) are not decayed.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const BasicParamStore<T>& params) {
    for (const auto& e : params) {
      m_.emplace_back(e.value.size(), 0.0);
      v_.emplace_back(e.value.size(), 0.0);
    }
  }

  /// Applies one update from the store's gradients, which must come from a
  /// backward pass since the last step.
  void step(BasicParamStore<T>& params, const AdamWConfig& cfg, double lr) {
    if (!params.grads_ready()) throw StateError("optimizer step before backward");
    if (params.size() != m_.size()) throw StateError("optimizer state does not match parameter store");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params.value(p);
      const auto& g = params.grad(p);
      const double wd = w.rank() >= 2 ? cfg.weight_decay : 0.0;
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double wi = w[i];
        w[i] = static_cast<T>(wi - lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * wi));
      }
    }
    params.mark_grads_ready(false);
  }

  std::int64_t steps() const noexcept { return t_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

  /// Restores state written by a checkpoint.
  void restore(std::int64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != v.size()) throw StateError("moment lists differ in length");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(BasicParamStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params)
    for (T g : e.grad.storage()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& e : params)
      for (auto& g : e.grad.storage()) g *= s;
  }
  return norm;
}

}  // namespace droprate
