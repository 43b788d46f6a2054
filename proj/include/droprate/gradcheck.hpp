// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "droprate/autograd.hpp"

namespace droprate {

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-2;
  std::size_t samples = 200;
  /// Denominator floor for the relative error, keeps near-zero gradients from
  /// dividing by rounding noise.
  double denom_floor = 1e-8;
  std::size_t report_worst = 5;
  std::uint64_t seed = 1234;
};

struct GradcheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::vector<GradcheckEntry> worst;  // descending by rel_error
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients against central differences
/// (f(θ+h) - f(θ-h)) / 2h on a random subsample of coordinates.
///
/// `loss_fn` must be deterministic and return a scalar node on the given tape.
/// `analytic_override`, when set, replaces the tape gradients before the
/// comparison (used to inject faults in tests).
template <class T>
GradcheckReport gradcheck(const std::function<Var(Tape<T>&, BasicParamStore<T>&)>& loss_fn,
                          BasicParamStore<T>& params, const GradcheckOptions& opts = {},
                          const std::function<void(BasicParamStore<T>&)>& analytic_override = {}) {
  params.zero_grad();
  {
    Tape<T> tape;
    tape.backward(loss_fn(tape, params));
  }
  if (analytic_override) analytic_override(params);

  auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(tape.value(loss_fn(tape, params))[0]);
  };

  // Flattened coordinate list, subsampled without replacement.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params.value(p).size(); ++i) coords.emplace_back(p, i);
  RngState rng(opts.seed, 0x67726164);
  const std::size_t n = std::min(opts.samples, coords.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.next_below(coords.size() - i);
    std::swap(coords[i], coords[j]);
  }
  coords.resize(n);

  GradcheckReport report;
  std::vector<GradcheckEntry> entries;
  for (auto [p, i] : coords) {
    T& w = params.value(p)[i];
    const T orig = w;
    w = static_cast<T>(orig + opts.step);
    const double up = eval();
    w = static_cast<T>(orig - opts.step);
    const double down = eval();
    w = orig;
    // Use the step actually representable in T.
    const double h2 = static_cast<double>(static_cast<T>(orig + opts.step)) -
                      static_cast<double>(static_cast<T>(orig - opts.step));
    GradcheckEntry e;
    e.param = params.name(p);
    e.index = i;
    e.analytic = params.grad(p)[i];
    e.numeric = (up - down) / h2;
    e.rel_error = relative_error(e.analytic, e.numeric, opts.denom_floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    entries.push_back(std::move(e));
  }
  report.checked = entries.size();
  report.passed = report.max_rel_error < opts.tolerance;
  std::sort(entries.begin(), entries.end(),
            [](const GradcheckEntry& a, const GradcheckEntry& b) { return a.rel_error > b.rel_error; });
  entries.resize(std::min(entries.size(), opts.report_worst));
  report.worst = std::move(entries);
  return report;
}

}  // namespace droprate
