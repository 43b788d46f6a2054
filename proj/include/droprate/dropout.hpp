// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "droprate/rng.hpp"
#include "droprate/tensor.hpp"

namespace droprate {

inline void validate_rate(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw InvalidRateError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
}

/// Keep/drop decisions for one dropout application. Element i is kept iff the
/// high 32 bits of its counter draw are at or above floor(p * 2^32).
class DropoutMask {
 public:
  DropoutMask() = default;
  DropoutMask(std::uint64_t key, double p) : key_(key), threshold_(threshold_for(p)) {}

  bool keep(std::uint64_t index) const noexcept {
    return (RngState::bits_at(key_, index) >> 32) >= threshold_;
  }

  static std::uint64_t threshold_for(double p) noexcept {
    return static_cast<std::uint64_t>(std::floor(p * 4294967296.0));
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t threshold_ = 0;
};

/// Inverted dropout. In training mode with p > 0 each element is zeroed with
/// probability p and survivors are scaled by 1/(1-p); one counter step of
/// `rng` is consumed. Eval mode and p == 0 return `x` unchanged and leave
/// `rng` untouched. `keep_out`, if given, receives the 0/1 mask.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, bool training, RngState& rng,
                       std::vector<std::uint8_t>* keep_out = nullptr) {
  validate_rate(p);
  if (!training || p == 0.0) return x;
  const DropoutMask mask(rng.block_key(), p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  std::vector<std::uint8_t> local;
  std::vector<std::uint8_t>& keep = keep_out ? *keep_out : local;
  keep.resize(x.size());
  BasicTensor<T> y(x.shape());
  // Raw pointers: byte stores would otherwise alias the containers' internals.
  std::uint8_t* k = keep.data();
  const T* xp = x.data();
  T* yp = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) k[i] = mask.keep(i);
  for (std::size_t i = 0; i < n; ++i) yp[i] = xp[i] * (static_cast<T>(k[i]) * s);
  return y;
}

}  // namespace droprate
