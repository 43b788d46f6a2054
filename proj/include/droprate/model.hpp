// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "droprate/autograd.hpp"
#include "droprate/dropout.hpp"
#include "droprate/params.hpp"
#include "droprate/rng.hpp"

namespace droprate {

struct ModelConfig {
  std::size_t n_layer = 6;
  std::size_t n_head = 6;
  std::size_t n_embd = 384;
  std::size_t block_size = 256;
  std::size_t vocab_size = 65;
  double dropout_p = 0.2;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
    if (n_layer < 1 || n_head < 1 || n_embd < 1) fail("n_layer, n_head and n_embd must be >= 1");
    if (n_embd % n_head != 0)
      fail("n_embd (" + std::to_string(n_embd) + ") must be divisible by n_head (" + std::to_string(n_head) + ")");
    if (block_size < 2) fail("block_size must be >= 2");
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Row-major [batch, seq] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;

  std::span<const std::int32_t> span() const noexcept { return ids; }
  std::int32_t at(std::size_t b, std::size_t t) const { return ids.at(b * seq + t); }
};

/// RNG stream ids used by the model.
namespace streams {
inline constexpr std::uint64_t kInit = 0x1A17;
inline constexpr std::uint64_t kDropout = 0xD20F;
inline constexpr std::uint64_t kSample = 0x5A3E;
}  // namespace streams

/// Decoder-only transformer with pre-norm blocks, learned positions and an
/// output head tied to the token embedding.
///
/// Every dropout site reads the single rate `current_dropout()`. The sites are
/// the embedding output, and per block the attention probabilities, the
/// attention projection output and the MLP output: 1 + 3 * n_layer in total.
template <class T>
class BasicGpt {
 public:
  struct Output {
    Var logits;  // [batch, seq, vocab]
    std::optional<Var> loss;
  };

  static BasicGpt init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    BasicGpt m;
    m.cfg_ = cfg;
    m.current_dropout_ = cfg.dropout_p;
    RngState rng(seed, streams::kInit);
    const std::size_t c = cfg.n_embd;
    const double std_base = 0.02;
    const double std_resid = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layer));
    auto normal = [&](Shape s, double sd) {
      BasicTensor<T> t(s);
      for (auto& v : t.storage()) v = static_cast<T>(sd * rng.next_normal());
      return t;
    };
    auto ones = [](std::size_t n) { return BasicTensor<T>::ones({n}); };
    auto zeros = [](std::size_t n) { return BasicTensor<T>::zeros({n}); };

    auto& p = m.params_;
    m.ids_.wte = p.add("transformer.wte.weight", normal({cfg.vocab_size, c}, std_base));
    m.ids_.wpe = p.add("transformer.wpe.weight", normal({cfg.block_size, c}, std_base));
    m.sites_.push_back("transformer.drop");
    for (std::size_t l = 0; l < cfg.n_layer; ++l) {
      const std::string pre = "transformer.h." + std::to_string(l) + ".";
      LayerIds ids;
      ids.ln1_g = p.add(pre + "ln_1.weight", ones(c));
      ids.ln1_b = p.add(pre + "ln_1.bias", zeros(c));
      ids.attn_w = p.add(pre + "attn.c_attn.weight", normal({c, 3 * c}, std_base));
      ids.attn_b = p.add(pre + "attn.c_attn.bias", zeros(3 * c));
      ids.proj_w = p.add(pre + "attn.c_proj.weight", normal({c, c}, std_resid));
      ids.proj_b = p.add(pre + "attn.c_proj.bias", zeros(c));
      ids.ln2_g = p.add(pre + "ln_2.weight", ones(c));
      ids.ln2_b = p.add(pre + "ln_2.bias", zeros(c));
      ids.fc_w = p.add(pre + "mlp.c_fc.weight", normal({c, 4 * c}, std_base));
      ids.fc_b = p.add(pre + "mlp.c_fc.bias", zeros(4 * c));
      ids.fc_proj_w = p.add(pre + "mlp.c_proj.weight", normal({4 * c, c}, std_resid));
      ids.fc_proj_b = p.add(pre + "mlp.c_proj.bias", zeros(c));
      m.layers_.push_back(ids);
      m.sites_.push_back(pre + "attn.attn_dropout");
      m.sites_.push_back(pre + "attn.resid_dropout");
      m.sites_.push_back(pre + "mlp.dropout");
    }
    m.ids_.lnf_g = p.add("transformer.ln_f.weight", ones(c));
    m.ids_.lnf_b = p.add("transformer.ln_f.bias", zeros(c));
    return m;
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  BasicParamStore<T>& params() noexcept { return params_; }
  const BasicParamStore<T>& params() const noexcept { return params_; }

  double current_dropout() const noexcept { return current_dropout_; }
  std::size_t dropout_sites() const noexcept { return sites_.size(); }

  /// Number of update_dropout calls over the model's lifetime.
  std::uint64_t dropout_update_count() const noexcept { return update_count_; }

  /// Sets the rate used by every dropout site on the next training forward.
  void update_dropout(double p) {
    validate_rate(p);
    current_dropout_ = p;
    ++update_count_;
  }

  std::vector<std::pair<std::string, double>> site_rates() const {
    std::vector<std::pair<std::string, double>> out;
    out.reserve(sites_.size());
    for (const auto& s : sites_) out.emplace_back(s, current_dropout_);
    return out;
  }

  /// Records the forward pass on `tape`. Site i draws its mask from
  /// `rng.fork(i)`, so the masks depend only on (rng, site).
  Output forward(Tape<T>& tape, const TokenBatch& tokens, std::span<const std::int32_t> targets, bool training,
                 const RngState& rng) {
    check_tokens(tokens);
    const std::size_t b = tokens.batch, s = tokens.seq, n = b * s;
    const double p = current_dropout_;

    std::vector<std::int32_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<std::int32_t>(i % s);

    std::size_t site = 0;
    auto site_rng = [&]() { return rng.fork(site++); };
    auto param = [&](std::size_t id) { return tape.param(params_, id); };

    const Var wte = param(ids_.wte);
    Var x = add(tape, embedding(tape, wte, tokens.span()), embedding(tape, param(ids_.wpe), pos));
    {
      auto r = site_rng();
      x = dropout(tape, x, p, training, r);
    }
    for (const auto& L : layers_) {
      Var h = layer_norm(tape, x, param(L.ln1_g), param(L.ln1_b));
      h = linear(tape, h, param(L.attn_w), param(L.attn_b));
      {
        auto r = site_rng();
        h = causal_self_attention(tape, h, b, s, cfg_.n_head, p, training, r);
      }
      h = linear(tape, h, param(L.proj_w), param(L.proj_b));
      {
        auto r = site_rng();
        h = dropout(tape, h, p, training, r);
      }
      x = add(tape, x, h);

      h = layer_norm(tape, x, param(L.ln2_g), param(L.ln2_b));
      h = linear(tape, h, param(L.fc_w), param(L.fc_b));
      h = gelu(tape, h);
      h = linear(tape, h, param(L.fc_proj_w), param(L.fc_proj_b));
      {
        auto r = site_rng();
        h = dropout(tape, h, p, training, r);
      }
      x = add(tape, x, h);
    }
    x = layer_norm(tape, x, param(ids_.lnf_g), param(ids_.lnf_b));
    Var logits2d = matmul_nt(tape, x, wte);

    Output out;
    if (!targets.empty()) {
      if (targets.size() != n)
        throw DimensionError("forward: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                             " positions");
      check_ids(targets);
      out.loss = cross_entropy_mean(tape, logits2d, targets);
    }
    out.logits = reshape(tape, logits2d, Shape{b, s, cfg_.vocab_size});
    return out;
  }

  /// Eval-mode logits without gradient bookkeeping.
  BasicTensor<T> logits(const TokenBatch& tokens) {
    Tape<T> tape(false);
    return tape.value(forward(tape, tokens, {}, false, RngState{}).logits);
  }

  /// Eval-mode mean loss without gradient bookkeeping.
  double loss(const TokenBatch& tokens, std::span<const std::int32_t> targets) {
    Tape<T> tape(false);
    return tape.value(*forward(tape, tokens, targets, false, RngState{}).loss)[0];
  }

  /// Autoregressive sampling in eval mode. The context is cropped to the last
  /// block_size tokens. Returns the prompt followed by `max_new` tokens.
  std::vector<std::int32_t> generate(std::vector<std::int32_t> prompt, std::size_t max_new, double temperature,
                                     std::optional<std::size_t> top_k, RngState& rng) {
    if (prompt.empty()) throw InputError("generate: empty prompt");
    if (!(temperature > 0.0)) throw InputError("generate: temperature must be > 0");
    if (top_k && *top_k == 0) throw InputError("generate: top_k must be >= 1");
    check_ids(prompt);
    const std::size_t v = cfg_.vocab_size;
    std::vector<double> probs(v);
    for (std::size_t step = 0; step < max_new; ++step) {
      const std::size_t len = std::min(prompt.size(), cfg_.block_size);
      TokenBatch ctx{1, len, std::vector<std::int32_t>(prompt.end() - static_cast<std::ptrdiff_t>(len), prompt.end())};
      const BasicTensor<T> lg = logits(ctx);
      const T* last = lg.data() + (len - 1) * v;
      for (std::size_t j = 0; j < v; ++j) probs[j] = static_cast<double>(last[j]) / temperature;
      if (top_k && *top_k < v) {
        std::vector<double> sorted(probs);
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(*top_k - 1), sorted.end(),
                         std::greater<>());
        const double kth = sorted[*top_k - 1];
        for (auto& x : probs)
          if (x < kth) x = -std::numeric_limits<double>::infinity();
      }
      const double mx = *std::max_element(probs.begin(), probs.end());
      double total = 0.0;
      for (auto& x : probs) total += (x = std::exp(x - mx));
      double u = rng.next_uniform() * total;
      std::size_t pick = 0;
      if (top_k && *top_k == 1) {
        pick = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      } else {
        for (pick = 0; pick + 1 < v; ++pick) {
          if (u < probs[pick]) break;
          u -= probs[pick];
        }
        while (probs[pick] == 0.0 && pick > 0) --pick;
      }
      prompt.push_back(static_cast<std::int32_t>(pick));
    }
    return prompt;
  }

 private:
  struct LayerIds {
    std::size_t ln1_g, ln1_b, attn_w, attn_b, proj_w, proj_b, ln2_g, ln2_b, fc_w, fc_b, fc_proj_w, fc_proj_b;
  };
  struct TopIds {
    std::size_t wte, wpe, lnf_g, lnf_b;
  };

  void check_ids(std::span<const std::int32_t> ids) const {
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(cfg_.vocab_size));
    }
  }

  void check_tokens(const TokenBatch& tokens) const {
    if (tokens.batch == 0 || tokens.seq == 0 || tokens.ids.size() != tokens.batch * tokens.seq)
      throw DimensionError("forward: token batch [" + std::to_string(tokens.batch) + ", " +
                           std::to_string(tokens.seq) + "] with " + std::to_string(tokens.ids.size()) + " ids");
    if (tokens.seq > cfg_.block_size)
      throw InputError("context overflow: sequence of " + std::to_string(tokens.seq) + " exceeds block_size " +
                       std::to_string(cfg_.block_size));
    check_ids(tokens.ids);
  }

  ModelConfig cfg_;
  BasicParamStore<T> params_;
  TopIds ids_{};
  std::vector<LayerIds> layers_;
  std::vector<std::string> sites_;
  double current_dropout_ = 0.0;
  std::uint64_t update_count_ = 0;
};

using Gpt = BasicGpt<float>;

}  // namespace droprate
