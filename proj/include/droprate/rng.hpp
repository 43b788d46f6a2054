// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace droprate {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based generator. A draw is a pure function of
/// (seed, stream, counter, index), so results do not depend on platform,
/// thread schedule or the order in which independent streams are consumed.
///
/// Scalar draws (`next_u64`, `next_uniform`, `next_normal`) consume one
/// counter step each. Bulk draws (`block_key` + `bits_at`) consume one counter
/// step for a whole block and address elements by index.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  constexpr RngState() = default;
  constexpr RngState(std::uint64_t seed_, std::uint64_t stream_ = 0, std::uint64_t counter_ = 0)
      : seed(seed_), stream(stream_), counter(counter_) {}

  /// Independent child stream; shares seed and counter.
  constexpr RngState fork(std::uint64_t child) const noexcept {
    return {seed, detail::mix64(stream * detail::kGolden + child + 1), counter};
  }

  constexpr std::uint64_t key_at(std::uint64_t ctr) const noexcept {
    using detail::mix64;
    return mix64(mix64(seed ^ 0x6A09E667F3BCC908ULL) ^ mix64(stream + detail::kGolden) ^
                 mix64(ctr * 0xD1B54A32D192ED03ULL + 1));
  }

  static constexpr std::uint64_t bits_at(std::uint64_t key, std::uint64_t index) noexcept {
    return detail::mix64(key + (index + 1) * detail::kGolden);
  }

  /// Key for a bulk block; advances the counter by one.
  constexpr std::uint64_t block_key() noexcept { return key_at(counter++); }

  constexpr std::uint64_t next_u64() noexcept { return bits_at(block_key(), 0); }

  /// Uniform in [0, 1) with 53 bits.
  double next_uniform() noexcept { return to_unit(next_u64()); }

  /// Uniform integer in [0, n), n > 0 (multiply-shift reduction).
  std::uint64_t next_below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; two counter steps.
  double next_normal() noexcept {
    const double u1 = 1.0 - next_uniform();  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  friend constexpr bool operator==(const RngState&, const RngState&) = default;
};

}  // namespace droprate
