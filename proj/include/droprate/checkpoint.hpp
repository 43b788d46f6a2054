// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "droprate/error.hpp"
#include "droprate/optim.hpp"
#include "droprate/params.hpp"

namespace droprate {

/// Binary layout:
///   "DDGPT1\0"                      7 bytes of magic (format version 1)
///   uint32 LE                        byte length of the JSON header
///   JSON header (UTF-8)              includes "tensors": [{name, shape}, ...]
///   float32 LE parameter data        in header order
///   float64 LE optimizer moments     m then v per tensor, when
///                                    header["optimizer"] is not null
inline constexpr std::array<char, 7> kCheckpointMagic = {'D', 'D', 'G', 'P', 'T', '1', '\0'};
inline constexpr int kCheckpointVersion = 1;

namespace ckpt_detail {

template <class U, class F>
void put_le(std::string& out, F value) {
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

template <class U, class F>
F get_le(const char* p) {
  U bits = 0;
  for (std::size_t i = sizeof(U); i-- > 0;) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<F>(bits);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  const char* take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

/// Parameters plus optional optimizer moments as read from disk.
struct CheckpointData {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::optional<std::int64_t> optimizer_steps;
  std::vector<std::vector<double>> m, v;
};

/// Writes `header` (extended with "version", "tensors" and "optimizer") and
/// the payload. The file is written to a temporary and renamed into place.
inline void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const ParamStore& params,
                             const AdamW<float>* opt) {
  header["version"] = kCheckpointVersion;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : params) {
    nlohmann::json shape = nlohmann::json::array();
    for (std::size_t d = 0; d < e.value.rank(); ++d) shape.push_back(e.value.dim(d));
    tensors.push_back({{"name", e.name}, {"shape", shape}});
  }
  header["tensors"] = tensors;
  header["optimizer"] = opt ? nlohmann::json{{"steps", opt->steps()}, {"dtype", "f64"}} : nlohmann::json(nullptr);

  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  ckpt_detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + params.numel() * (opt ? 20 : 4));
  for (const auto& e : params)
    for (float x : e.value.storage()) ckpt_detail::put_le<std::uint32_t>(out, x);
  if (opt) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (double x : opt->first_moments().at(p)) ckpt_detail::put_le<std::uint64_t>(out, x);
      for (double x : opt->second_moments().at(p)) ckpt_detail::put_le<std::uint64_t>(out, x);
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  ckpt_detail::Reader r(std::string(std::istreambuf_iterator<char>(f), {}));

  const char* magic = r.take(kCheckpointMagic.size(), "magic");
  if (std::memcmp(magic, kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError(path.string() + " is not a version-1 droprate checkpoint (bad magic)");
  const auto len = ckpt_detail::get_le<std::uint32_t, std::uint32_t>(r.take(4, "header length"));
  const char* text = r.take(len, "header");

  CheckpointData out;
  try {
    out.header = nlohmann::json::parse(std::string_view(text, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (out.header.value("version", 0) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + out.header.value("version", nlohmann::json()).dump());

  try {
    for (const auto& t : out.header.at("tensors")) {
      std::vector<std::size_t> dims = t.at("shape").get<std::vector<std::size_t>>();
      Shape s = dims.size() == 1   ? Shape{dims[0]}
                : dims.size() == 2 ? Shape{dims[0], dims[1]}
                                   : Shape{dims.at(0), dims.at(1), dims.at(2)};
      Tensor value(s);
      const char* p = r.take(value.size() * 4, "parameter data");
      for (std::size_t i = 0; i < value.size(); ++i) value[i] = ckpt_detail::get_le<std::uint32_t, float>(p + 4 * i);
      out.tensors.emplace_back(t.at("name").get<std::string>(), std::move(value));
    }
    const auto& opt = out.header.at("optimizer");
    if (!opt.is_null()) {
      out.optimizer_steps = opt.at("steps").get<std::int64_t>();
      for (const auto& [name, value] : out.tensors) {
        (void)name;
        for (auto* dst : {&out.m, &out.v}) {
          std::vector<double> buf(value.size());
          const char* p = r.take(value.size() * 8, "optimizer moments");
          for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = ckpt_detail::get_le<std::uint64_t, double>(p + 8 * i);
          dst->push_back(std::move(buf));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("malformed tensor shape: ") + e.what());
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint payload");
  return out;
}

}  // namespace droprate
