// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "droprate/schedule.hpp"

using namespace droprate;

namespace {

ScheduleConfig base() {
  ScheduleConfig c;
  c.p0 = 0.2;
  c.pf = 0.0;
  c.total_iters = 5000;
  return c;
}

// 50-digit evaluation of 0.2 * (0.001 / 0.2)^(t/5000) from the double inputs.
constexpr double kExpOracleT0 = 0.2000000000000000111022302;
constexpr double kExpOracleMid = 0.01414213562373095102773617;
constexpr double kExpOracleEnd = 0.001000000000000000020816682;
constexpr double kExpOracleRelTol = 1e-9;

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

/// Random valid configuration; pf <= p0 so every decaying kind is valid.
ScheduleConfig random_config(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScheduleConfig c;
  c.p0 = 0.95 * u(g);
  c.pf = c.p0 * u(g);
  if (u(g) < 0.2) c.pf = 0.0;
  c.total_iters = std::uniform_int_distribution<std::int64_t>(1, 6000)(g);
  c.step_size = std::uniform_int_distribution<std::int64_t>(1, 1500)(g);
  c.decay_factor = 0.05 + 0.95 * u(g);
  c.exp_floor_eps = std::pow(10.0, -1.0 - 5.0 * u(g));
  c.adapt_delta = 0.05 * u(g);
  c.adapt_p_min = c.p0 * 0.5 * u(g);
  if (u(g) < 0.5) c.adapt_p_max = c.p0 + (0.99 - c.p0) * u(g);
  return c;
}

}  // namespace

TEST_CASE("linear schedule examples") {
  const auto c = base();
  CHECK(rate_linear(0, c) == 0.2);
  CHECK(rate_linear(2500, c) == 0.1);
  CHECK(rate_linear(5000, c) == 0.0);
}

TEST_CASE("exponential schedule matches high-precision oracle") {
  auto c = base();
  c.pf = 0.001;
  CHECK(rel_err(rate_exponential(0, c), kExpOracleT0) < kExpOracleRelTol);
  CHECK(rel_err(rate_exponential(2500, c), kExpOracleMid) < kExpOracleRelTol);
  CHECK(rel_err(rate_exponential(5000, c), kExpOracleEnd) < kExpOracleRelTol);
}

TEST_CASE("exponential schedule clamps a zero target to the floor") {
  const auto c = base();  // pf = 0, exp_floor_eps = 1e-3
  CHECK(rel_err(rate_exponential(2500, c), kExpOracleMid) < kExpOracleRelTol);
  CHECK(rel_err(rate_exponential(5000, c), kExpOracleEnd) < kExpOracleRelTol);
  CHECK(rate_exponential(1, c) > 0.19);
}

TEST_CASE("exponential schedule with zero p0 stays at zero") {
  auto c = base();
  c.p0 = 0.0;
  CHECK(rate_exponential(0, c) == 0.0);
  CHECK(rate_exponential(5000, c) == 0.0);
}

TEST_CASE("step schedule examples") {
  const auto c = base();
  CHECK(rate_step(999, c) == 0.2);
  CHECK(rate_step(1000, c) == 0.1);
  CHECK(rate_step(2500, c) == 0.05);
  CHECK(rate_step(0, c) == 0.2);
  CHECK(rate_step(1'000'000, c) >= 0.0);
}

TEST_CASE("cosine schedule examples") {
  const auto c = base();
  CHECK(rate_cosine(0, c) == 0.2);
  CHECK(rate_cosine(2500, c) == 0.1);
  CHECK(rate_cosine(5000, c) == 0.0);
}

TEST_CASE("schedules reject iterations outside the horizon") {
  const auto c = base();
  CHECK_THROWS_AS(rate_linear(5001, c), OutOfRangeError);
  CHECK_THROWS_AS(rate_linear(-1, c), OutOfRangeError);
  CHECK_THROWS_AS(rate_exponential(5001, c), OutOfRangeError);
  CHECK_THROWS_AS(rate_cosine(5001, c), OutOfRangeError);
  CHECK_THROWS_AS(rate_step(-1, c), OutOfRangeError);
}

TEST_CASE("adaptive update examples") {
  auto c = base();
  c.adapt_delta = 0.01;
  AdaptiveState s{0.2, std::numeric_limits<double>::infinity(), 0};
  auto [s1, p1] = adaptive_update(s, 1.8, c);
  CHECK(p1 == Catch::Approx(0.19).margin(1e-15));
  CHECK(s1.best_val_loss == 1.8);

  auto [s2, p2] = adaptive_update(s1, 1.9, c);
  CHECK(p2 == Catch::Approx(0.20).margin(1e-15));
  CHECK(s2.best_val_loss == 1.8);

  AdaptiveState low{0.0, 1.5, 3};
  auto [s3, p3] = adaptive_update(low, 1.4, c);
  CHECK(p3 == 0.0);
  CHECK(s3.best_val_loss == 1.4);
}

TEST_CASE("adaptive update treats a tie as no improvement") {
  auto c = base();
  AdaptiveState s{0.1, 1.5, 1};
  auto [next, p] = adaptive_update(s, 1.5, c);
  CHECK(p == Catch::Approx(0.11).margin(1e-15));
  CHECK(next.best_val_loss == 1.5);
}

TEST_CASE("adaptive update rejects bad losses") {
  const auto c = base();
  const auto s = AdaptiveState::initial(c);
  CHECK_THROWS_AS(adaptive_update(s, std::nan(""), c), InputError);
  CHECK_THROWS_AS(adaptive_update(s, -1.0, c), InputError);
  CHECK_THROWS_AS(adaptive_update(s, std::numeric_limits<double>::infinity(), c), InputError);
}

TEST_CASE("adaptive trace: seed then three updates") {
  auto c = base();
  c.adapt_delta = 0.01;
  auto s = adaptive_seed(AdaptiveState::initial(c), 2.0);
  CHECK(s.current_p == 0.2);
  std::vector<double> trace;
  for (double v : {1.9, 1.95, 1.8}) {
    auto [next, p] = adaptive_update(s, v, c);
    s = next;
    trace.push_back(p);
  }
  REQUIRE(trace.size() == 3);
  CHECK(trace[0] == Catch::Approx(0.19).margin(1e-15));
  CHECK(trace[1] == Catch::Approx(0.20).margin(1e-15));
  CHECK(trace[2] == Catch::Approx(0.19).margin(1e-15));
  CHECK(s.best_val_loss == 1.8);
}

TEST_CASE("rate_at dispatch") {
  const auto c = base();
  CHECK(rate_at(ScheduleKind::Constant, 4999, c) == 0.2);
  CHECK(rate_at(ScheduleKind::LinearDecay, 0, c) == 0.2);
  AdaptiveState s{0.13, 1.0, 2};
  CHECK(rate_at(ScheduleKind::ValLossAdaptive, 123, c, &s) == 0.13);
  CHECK(rate_at(ScheduleKind::ValLossAdaptive, 4000, c, &s) == 0.13);
  CHECK_THROWS_AS(rate_at(ScheduleKind::ValLossAdaptive, 0, c), ConfigError);
  CHECK_THROWS_AS(rate_at(ScheduleKind::LinearDecay, 0, c, &s), ConfigError);
}

TEST_CASE("labels are stable and parse back") {
  CHECK(label(ScheduleKind::Constant) == "baseline");
  CHECK(label(ScheduleKind::LinearDecay) == "linear");
  CHECK(label(ScheduleKind::ExponentialDecay) == "exponential");
  CHECK(label(ScheduleKind::StepDecay) == "step");
  CHECK(label(ScheduleKind::CosineAnnealing) == "cosine");
  CHECK(label(ScheduleKind::ValLossAdaptive) == "val_adaptive");
  for (auto k : kAllScheduleKinds) CHECK(parse_schedule_kind(label(k)) == k);
  CHECK_THROWS_AS(parse_schedule_kind("warmup"), ConfigError);
}

TEST_CASE("config validation") {
  auto c = base();
  c.p0 = 1.0;
  CHECK_THROWS_AS(c.validate(ScheduleKind::Constant), ConfigError);
  c = base();
  c.pf = 0.3;
  CHECK_THROWS_AS(c.validate(ScheduleKind::LinearDecay), ConfigError);
  CHECK_NOTHROW(c.validate(ScheduleKind::Constant));
  c = base();
  c.step_size = 0;
  CHECK_THROWS_AS(c.validate(ScheduleKind::StepDecay), ConfigError);
  c = base();
  c.adapt_p_min = 0.3;
  CHECK_THROWS_AS(c.validate(ScheduleKind::ValLossAdaptive), ConfigError);
}

TEST_CASE("property: endpoints, monotonicity, range, purity over random configs") {
  std::mt19937_64 g(20240611);
  constexpr int kConfigs = 1000;
  for (int n = 0; n < kConfigs; ++n) {
    const auto c = random_config(g);
    REQUIRE_NOTHROW(c.validate(ScheduleKind::LinearDecay));
    const std::int64_t T = c.total_iters;

    CHECK(rate_linear(0, c) == c.p0);
    CHECK(rate_cosine(0, c) == c.p0);
    CHECK(rate_exponential(0, c) == Catch::Approx(c.p0).epsilon(1e-15));
    CHECK(rate_linear(T, c) == Catch::Approx(c.pf).margin(1e-16));
    CHECK(rate_cosine(T, c) == Catch::Approx(c.pf).margin(1e-16));
    if (c.pf >= c.exp_floor_eps) CHECK(rate_exponential(T, c) == Catch::Approx(c.pf).epsilon(1e-14));

    const std::int64_t stride = std::max<std::int64_t>(1, T / 400);
    std::vector<std::int64_t> grid;
    for (std::int64_t t = 0; t < T; t += stride) grid.push_back(t);
    for (std::int64_t t = std::max<std::int64_t>(0, T - 50); t <= T; ++t) grid.push_back(t);
    std::sort(grid.begin(), grid.end());
    for (auto kind : {ScheduleKind::LinearDecay, ScheduleKind::ExponentialDecay, ScheduleKind::StepDecay,
                      ScheduleKind::CosineAnnealing}) {
      INFO("kind " << label(kind) << ", T " << T);
      double prev = rate_at(kind, 0, c);
      for (std::int64_t t : grid) {
        const double r = rate_at(kind, t, c);
        CHECK(r >= 0.0);
        CHECK(r < 1.0);
        CHECK(r <= prev);
        CHECK(r == rate_at(kind, t, c));
        prev = r;
      }
      for (std::int64_t t = 0; t < std::min<std::int64_t>(T, 50); ++t) CHECK(rate_at(kind, t + 1, c) <= rate_at(kind, t, c));
    }
  }
}

TEST_CASE("property: step schedule is constant within each interval") {
  std::mt19937_64 g(77);
  for (int n = 0; n < 1000; ++n) {
    const auto c = random_config(g);
    const std::int64_t k = std::uniform_int_distribution<std::int64_t>(0, 5)(g);
    const std::int64_t start = k * c.step_size;
    const double v = rate_step(start, c);
    std::uniform_int_distribution<std::int64_t> off(0, c.step_size - 1);
    for (int j = 0; j < 8; ++j) CHECK(rate_step(start + off(g), c) == v);
    CHECK(rate_step(start + c.step_size - 1, c) == v);
    CHECK(rate_step(start + c.step_size, c) <= v);
  }
}

TEST_CASE("property: adaptive controller stays bounded and tracks the best loss") {
  std::mt19937_64 g(4242);
  std::uniform_real_distribution<double> loss(0.5, 4.0);
  for (int n = 0; n < 1000; ++n) {
    auto c = random_config(g);
    c.improve_tol = 0.0;
    auto s = AdaptiveState::initial(c);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 40; ++i) {
      const double v = loss(g);
      s = adaptive_update(s, v, c).first;
      best = std::min(best, v);
      CHECK(s.current_p >= c.adapt_p_min);
      CHECK(s.current_p <= c.p_max());
      CHECK(s.best_val_loss == best);
    }
  }
}

TEST_CASE("property: strictly decreasing losses lower the rate by min(n delta, p0 - p_min)") {
  std::mt19937_64 g(99);
  for (int n = 0; n < 1000; ++n) {
    auto c = random_config(g);
    const int steps = std::uniform_int_distribution<int>(1, 60)(g);
    auto s = AdaptiveState::initial(c);
    double v = 5.0;
    for (int i = 0; i < steps; ++i) s = adaptive_update(s, v -= 0.01, c).first;
    const double expected_drop = std::min(steps * c.adapt_delta, c.p0 - c.adapt_p_min);
    CHECK(c.p0 - s.current_p == Catch::Approx(expected_drop).margin(1e-12));
  }
}
