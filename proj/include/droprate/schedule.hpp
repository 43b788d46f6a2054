// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "droprate/error.hpp"

namespace droprate {

/// Dropout-rate schedules. All rates are fractions in [0, 1) and all
/// iteration arguments count optimizer steps from 0.
enum class ScheduleKind {
  Constant,
  LinearDecay,
  ExponentialDecay,
  StepDecay,
  CosineAnnealing,
  ValLossAdaptive,
};

inline constexpr std::array kAllScheduleKinds = {
    ScheduleKind::Constant,        ScheduleKind::LinearDecay,     ScheduleKind::ExponentialDecay,
    ScheduleKind::StepDecay,       ScheduleKind::CosineAnnealing, ScheduleKind::ValLossAdaptive,
};

/// Stable report labels.
constexpr std::string_view label(ScheduleKind k) noexcept {
  switch (k) {
    case ScheduleKind::Constant: return "baseline";
    case ScheduleKind::LinearDecay: return "linear";
    case ScheduleKind::ExponentialDecay: return "exponential";
    case ScheduleKind::StepDecay: return "step";
    case ScheduleKind::CosineAnnealing: return "cosine";
    case ScheduleKind::ValLossAdaptive: return "val_adaptive";
  }
  return "unknown";
}

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  for (auto k : kAllScheduleKinds)
    if (label(k) == s) return k;
  if (s == "constant") return ScheduleKind::Constant;
  throw ConfigError("unknown schedule '" + std::string(s) +
                    "' (expected baseline, linear, exponential, step, cosine or val_adaptive)");
}

constexpr bool is_decaying(ScheduleKind k) noexcept {
  return k == ScheduleKind::LinearDecay || k == ScheduleKind::ExponentialDecay || k == ScheduleKind::StepDecay ||
         k == ScheduleKind::CosineAnnealing;
}

struct ScheduleConfig {
  double p0 = 0.2;
  double pf = 0.0;
  std::int64_t total_iters = 5000;
  double decay_factor = 0.5;
  std::int64_t step_size = 1000;
  double adapt_delta = 0.01;
  double adapt_p_min = 0.0;
  std::optional<double> adapt_p_max;  // unset: p0
  double improve_tol = 0.0;
  double exp_floor_eps = 1e-3;

  double p_max() const noexcept { return adapt_p_max.value_or(p0); }

  void validate(ScheduleKind kind) const {
    auto fail = [](const std::string& m) { throw ConfigError("schedule: " + m); };
    auto is_rate = [](double p) { return p >= 0.0 && p < 1.0; };
    if (!is_rate(p0)) fail("p0 must lie in [0, 1), got " + std::to_string(p0));
    if (!is_rate(pf)) fail("pf must lie in [0, 1), got " + std::to_string(pf));
    if (is_decaying(kind) && pf > p0) fail("pf must not exceed p0 for a decaying schedule");
    if (total_iters < 1) fail("total_iters must be >= 1");
    if (step_size < 1) fail("step_size must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor must lie in (0, 1]");
    if (!(exp_floor_eps > 0.0 && exp_floor_eps < 1.0)) fail("exp_floor_eps must lie in (0, 1)");
    if (!(adapt_delta >= 0.0 && adapt_delta < 1.0)) fail("adapt_delta must lie in [0, 1)");
    if (!is_rate(adapt_p_min) || !is_rate(p_max()) || adapt_p_min > p_max())
      fail("adaptive bounds need 0 <= adapt_p_min <= adapt_p_max < 1");
    if (!(improve_tol >= 0.0) || !std::isfinite(improve_tol)) fail("improve_tol must be finite and >= 0");
  }
};

namespace detail {

inline double horizon_fraction(std::int64_t t, const ScheduleConfig& cfg, const char* name) {
  if (t < 0 || t > cfg.total_iters) {
    throw OutOfRangeError(std::string(name) + ": iteration " + std::to_string(t) + " outside [0, " +
                          std::to_string(cfg.total_iters) + "]");
  }
  return static_cast<double>(t) / static_cast<double>(cfg.total_iters);
}

}  // namespace detail

/// p0 (1 - t/T) + pf t/T.
inline double rate_linear(std::int64_t t, const ScheduleConfig& cfg) {
  const double f = detail::horizon_fraction(t, cfg, "rate_linear");
  if (cfg.pf == cfg.p0) return cfg.p0;
  return cfg.p0 * (1.0 - f) + cfg.pf * f;
}

/// p0 (pf'/p0)^(t/T) with pf' = max(pf, exp_floor_eps), capped at p0. A zero
/// target would collapse the curve to 0 for every t > 0.
inline double rate_exponential(std::int64_t t, const ScheduleConfig& cfg) {
  const double f = detail::horizon_fraction(t, cfg, "rate_exponential");
  if (cfg.p0 == 0.0) return 0.0;
  const double target = std::min(std::max(cfg.pf, cfg.exp_floor_eps), cfg.p0);
  return cfg.p0 * std::pow(target / cfg.p0, f);
}

/// max(pf, p0 * decay^floor(t / step_size)); defined for every t >= 0.
inline double rate_step(std::int64_t t, const ScheduleConfig& cfg) {
  if (t < 0) throw OutOfRangeError("rate_step: negative iteration " + std::to_string(t));
  const auto k = static_cast<double>(t / cfg.step_size);
  return std::max(cfg.pf, cfg.p0 * std::pow(cfg.decay_factor, k));
}

/// Half-cosine from p0 at t = 0 to pf at t = T.
inline double rate_cosine(std::int64_t t, const ScheduleConfig& cfg) {
  const double f = detail::horizon_fraction(t, cfg, "rate_cosine");
  const double w = (1.0 + std::cos(std::numbers::pi * f)) / 2.0;
  return cfg.p0 * w + cfg.pf * (1.0 - w);
}

/// Validation-loss feedback state.
struct AdaptiveState {
  double current_p = 0.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::int64_t evals_seen = 0;

  static AdaptiveState initial(const ScheduleConfig& cfg) {
    return {std::clamp(cfg.p0, cfg.adapt_p_min, cfg.p_max()), std::numeric_limits<double>::infinity(), 0};
  }

  friend bool operator==(const AdaptiveState&, const AdaptiveState&) = default;
};

namespace detail {

inline void check_val_loss(double v) {
  if (!std::isfinite(v) || v < 0.0)
    throw InputError("validation loss must be finite and non-negative, got " + std::to_string(v));
}

}  // namespace detail

/// Improvement (strictly below best - improve_tol) lowers the rate by
/// adapt_delta and records the new best; anything else, ties included,
/// raises it. The rate stays within [adapt_p_min, adapt_p_max].
inline std::pair<AdaptiveState, double> adaptive_update(const AdaptiveState& state, double val_loss,
                                                        const ScheduleConfig& cfg) {
  detail::check_val_loss(val_loss);
  AdaptiveState next = state;
  if (val_loss < state.best_val_loss - cfg.improve_tol) {
    next.current_p = std::max(state.current_p - cfg.adapt_delta, cfg.adapt_p_min);
    next.best_val_loss = val_loss;
  } else {
    next.current_p = std::min(state.current_p + cfg.adapt_delta, cfg.p_max());
  }
  ++next.evals_seen;
  return {next, next.current_p};
}

/// Records a reference loss without moving the rate. The trainer uses it for
/// the evaluation of the untrained model, which has nothing to improve upon.
inline AdaptiveState adaptive_seed(const AdaptiveState& state, double val_loss) {
  detail::check_val_loss(val_loss);
  AdaptiveState next = state;
  next.best_val_loss = std::min(state.best_val_loss, val_loss);
  ++next.evals_seen;
  return next;
}

/// Single dispatch point for the trainer. `state` must be given exactly for
/// ValLossAdaptive, whose rate is read, never advanced, here.
inline double rate_at(ScheduleKind kind, std::int64_t t, const ScheduleConfig& cfg,
                      const AdaptiveState* state = nullptr) {
  if (kind == ScheduleKind::ValLossAdaptive) {
    if (!state) throw ConfigError("val_adaptive schedule needs an adaptive state");
    return state->current_p;
  }
  if (state) throw ConfigError("adaptive state given for non-adaptive schedule " + std::string(label(kind)));
  switch (kind) {
    case ScheduleKind::Constant:
      if (t < 0) throw OutOfRangeError("negative iteration " + std::to_string(t));
      return cfg.p0;
    case ScheduleKind::LinearDecay: return rate_linear(t, cfg);
    case ScheduleKind::ExponentialDecay: return rate_exponential(t, cfg);
    case ScheduleKind::StepDecay: return rate_step(t, cfg);
    case ScheduleKind::CosineAnnealing: return rate_cosine(t, cfg);
    case ScheduleKind::ValLossAdaptive: break;
  }
  throw ConfigError("unhandled schedule kind");
}

}  // namespace droprate
