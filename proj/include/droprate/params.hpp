// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "droprate/tensor.hpp"

namespace droprate {

/// Named parameters with parallel gradient buffers, kept in insertion order.
template <class T>
class BasicParamStore {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
  };

  std::size_t add(std::string name, BasicTensor<T> value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    const std::size_t id = entries_.size();
    index_.emplace(name, id);
    BasicTensor<T> grad(value.shape());
    entries_.push_back({std::move(name), std::move(value), std::move(grad)});
    return id;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t numel() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::size_t id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  Entry& operator[](std::size_t i) { return entries_.at(i); }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  BasicTensor<T>& value(std::size_t i) { return entries_.at(i).value; }
  const BasicTensor<T>& value(std::size_t i) const { return entries_.at(i).value; }
  BasicTensor<T>& grad(std::size_t i) { return entries_.at(i).grad; }
  const BasicTensor<T>& grad(std::size_t i) const { return entries_.at(i).grad; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
    grads_ready_ = false;
  }

  /// Set by Tape::backward, cleared by zero_grad and by the optimizer step.
  bool grads_ready() const noexcept { return grads_ready_; }
  void mark_grads_ready(bool ready) noexcept { grads_ready_ = ready; }

  /// FNV-1a over names, shapes and raw value bits.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      feed(e.name.data(), e.name.size());
      for (std::size_t d = 0; d < e.value.rank(); ++d) {
        const std::uint64_t x = e.value.dim(d);
        feed(&x, sizeof x);
      }
      feed(e.value.data(), e.value.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  bool grads_ready_ = false;
};

using ParamStore = BasicParamStore<float>;

}  // namespace droprate
