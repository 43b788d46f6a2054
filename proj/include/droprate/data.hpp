// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "droprate/error.hpp"
#include "droprate/model.hpp"
#include "droprate/rng.hpp"

namespace droprate {

namespace utf8 {

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) throw InputError("invalid UTF-8 at byte " + std::to_string(i));
    char32_t cp = len == 1 ? b0 : b0 & (0x7F >> len);
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) throw InputError("invalid UTF-8 at byte " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append(out, cp);
  return out;
}

}  // namespace utf8

using TokenId = std::uint16_t;

/// Character vocabulary; ids follow code-point order.
class Vocab {
 public:
  Vocab() = default;

  static Vocab from_text(std::u32string_view text) {
    std::u32string chars(text);
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    return from_chars(chars);
  }

  /// `chars` must be strictly increasing.
  static Vocab from_chars(std::u32string chars) {
    if (chars.size() > 65536) throw InputError("vocabulary larger than 65536 symbols");
    if (!std::is_sorted(chars.begin(), chars.end()) ||
        std::adjacent_find(chars.begin(), chars.end()) != chars.end())
      throw InputError("vocabulary characters must be unique and sorted by code point");
    Vocab v;
    v.chars_ = std::move(chars);
    for (std::size_t i = 0; i < v.chars_.size(); ++i) v.index_.emplace(v.chars_[i], static_cast<TokenId>(i));
    return v;
  }

  std::size_t size() const noexcept { return chars_.size(); }
  const std::u32string& chars() const noexcept { return chars_; }
  char32_t symbol(TokenId id) const { return chars_.at(id); }
  bool contains(char32_t c) const { return index_.contains(c); }

  std::vector<TokenId> encode(std::u32string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (char32_t c : text) {
      auto it = index_.find(c);
      if (it == index_.end()) {
        std::string s;
        utf8::append(s, c);
        throw InputError("character '" + s + "' (U+" + hex(c) + ") is not in the vocabulary");
      }
      out.push_back(it->second);
    }
    return out;
  }

  std::vector<TokenId> encode_utf8(std::string_view text) const { return encode(utf8::decode(text)); }

  template <class Id>
  std::string decode(const std::vector<Id>& ids) const {
    std::string out;
    for (auto id : ids) utf8::append(out, chars_.at(static_cast<std::size_t>(id)));
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.chars_ == b.chars_; }

 private:
  static std::string hex(char32_t c) {
    std::ostringstream os;
    os << std::hex << std::uppercase << static_cast<std::uint32_t>(c);
    std::string s = os.str();
    return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
  }

  std::u32string chars_;
  std::map<char32_t, TokenId> index_;
};

enum class Split { Train, Val };

/// Encoded corpus cut into a training prefix and a validation suffix.
struct SplitDataset {
  std::vector<TokenId> train_ids;
  std::vector<TokenId> val_ids;
  Vocab vocab;

  const std::vector<TokenId>& ids(Split s) const noexcept { return s == Split::Train ? train_ids : val_ids; }
};

inline SplitDataset build_dataset(std::string_view corpus_utf8, double val_fraction = 0.1) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));
  if (corpus_utf8.empty()) throw InputError("empty corpus");
  const std::u32string text = utf8::decode(corpus_utf8);
  SplitDataset ds;
  ds.vocab = Vocab::from_text(text);
  if (ds.vocab.size() < 2) throw InputError("degenerate vocabulary: corpus has a single distinct character");
  std::vector<TokenId> ids = ds.vocab.encode(text);
  const auto n_train = static_cast<std::size_t>(std::llround((1.0 - val_fraction) * static_cast<double>(ids.size())));
  if (n_train == 0 || n_train >= ids.size())
    throw InputError("corpus of " + std::to_string(ids.size()) + " characters is too short to split");
  ds.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return ds;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline SplitDataset load_dataset(const std::filesystem::path& corpus, double val_fraction = 0.1) {
  return build_dataset(read_text_file(corpus), val_fraction);
}

/// Next-token training pair.
struct Batch {
  TokenBatch x;
  std::vector<std::int32_t> y;
};

/// Draws `batch` windows of length `seq` with uniformly random start offsets;
/// y is x shifted one position ahead in the source. One counter step of `rng`
/// per row.
inline Batch sample_batch(const SplitDataset& ds, Split split, std::size_t batch, std::size_t seq, RngState& rng) {
  const auto& src = ds.ids(split);
  if (batch == 0 || seq == 0) throw InputError("sample_batch: batch and seq must be positive");
  if (src.size() < seq + 1)
    throw InputError("sample_batch: split of " + std::to_string(src.size()) + " tokens cannot hold a window of " +
                     std::to_string(seq + 1));
  const std::size_t starts = src.size() - seq;
  Batch out;
  out.x = TokenBatch{batch, seq, std::vector<std::int32_t>(batch * seq)};
  out.y.resize(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t start = rng.next_below(starts);
    for (std::size_t t = 0; t < seq; ++t) {
      out.x.ids[b * seq + t] = src[start + t];
      out.y[b * seq + t] = src[start + t + 1];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optional on-disk cache: <stem>.bin holds ids as little-endian uint16 (train
// then val), <stem>.json holds the vocabulary and the split sizes.

inline void write_cache(const SplitDataset& ds, const std::filesystem::path& stem) {
  std::ofstream bin(std::filesystem::path(stem).replace_extension(".bin"), std::ios::binary);
  if (!bin) throw IoError("cannot write cache " + stem.string());
  auto put = [&bin](const std::vector<TokenId>& ids) {
    for (TokenId id : ids) {
      const unsigned char b[2] = {static_cast<unsigned char>(id & 0xFF), static_cast<unsigned char>(id >> 8)};
      bin.write(reinterpret_cast<const char*>(b), 2);
    }
  };
  put(ds.train_ids);
  put(ds.val_ids);
  nlohmann::json meta = {{"vocab", utf8::encode(ds.vocab.chars())},
                         {"train_tokens", ds.train_ids.size()},
                         {"val_tokens", ds.val_ids.size()}};
  std::ofstream js(std::filesystem::path(stem).replace_extension(".json"));
  js << meta.dump(2) << "\n";
  if (!bin || !js) throw IoError("cannot write cache " + stem.string());
}

inline SplitDataset read_cache(const std::filesystem::path& stem) {
  const auto meta = nlohmann::json::parse(read_text_file(std::filesystem::path(stem).replace_extension(".json")));
  const std::string raw = read_text_file(std::filesystem::path(stem).replace_extension(".bin"));
  const auto n_train = meta.at("train_tokens").get<std::size_t>();
  const auto n_val = meta.at("val_tokens").get<std::size_t>();
  if (raw.size() != 2 * (n_train + n_val)) throw IoError("cache size mismatch for " + stem.string());
  SplitDataset ds;
  ds.vocab = Vocab::from_chars(utf8::decode(meta.at("vocab").get<std::string>()));
  std::vector<TokenId> ids(n_train + n_val);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<TokenId>(static_cast<unsigned char>(raw[2 * i]) |
                                  (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
    if (ids[i] >= ds.vocab.size()) throw IoError("cache id out of vocabulary range");
  }
  ds.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return ds;
}

}  // namespace droprate
