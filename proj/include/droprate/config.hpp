// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "droprate/error.hpp"
#include "droprate/model.hpp"
#include "droprate/schedule.hpp"

namespace droprate {

/// Everything that defines one training run apart from the data.
struct TrainConfig {
  ModelConfig model;
  ScheduleKind schedule = ScheduleKind::Constant;
  ScheduleConfig sched;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::int64_t max_iters = 5000;
  std::int64_t eval_interval = 250;
  std::int64_t eval_iters = 20;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double grad_clip = 1.0;
  std::uint64_t seed = 1337;
  bool lr_decay = false;  // cosine decay of the learning rate down to min_lr
  double min_lr = 1e-4;

  /// Schedule parameters with the horizon tied to max_iters.
  ScheduleConfig schedule_config() const {
    ScheduleConfig s = sched;
    s.total_iters = max_iters;
    return s;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (max_iters < 1) fail("max_iters must be >= 1");
    if (eval_interval < 1 || eval_interval > max_iters) fail("eval_interval must lie in [1, max_iters]");
    if (eval_iters < 1) fail("eval_iters must be >= 1");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("beta1 and beta2 must lie in [0, 1)");
    if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0 (0 disables clipping)");
    if (lr_decay && !(min_lr >= 0.0 && min_lr <= learning_rate)) fail("min_lr must lie in [0, learning_rate]");
    ModelConfig m = model;
    m.vocab_size = std::max<std::size_t>(m.vocab_size, 2);
    m.dropout_p = sched.p0;
    m.validate();
    schedule_config().validate(schedule);
  }
};

/// A fully resolved command configuration.
struct RunSpec {
  TrainConfig train;
  std::string corpus;
  double val_fraction = 0.1;
  std::string out_dir = "runs";
  std::string label = "run";
  std::vector<ScheduleKind> compare_schedules = {ScheduleKind::Constant, ScheduleKind::LinearDecay,
                                                 ScheduleKind::ExponentialDecay, ScheduleKind::ValLossAdaptive,
                                                 ScheduleKind::CosineAnnealing};
  std::size_t bench_tokens = 500;

  void validate() const {
    train.validate();
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("data.val_fraction must lie in (0, 1)");
    if (bench_tokens < 1) throw ConfigError("bench.n_tokens must be >= 1");
  }
};

namespace config_detail {

using nlohmann::json;

[[noreturn]] inline void bad(const std::string& key, const std::string& why) {
  throw ConfigError(key + ": " + why);
}

inline double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) bad(key, "expected a number, got " + v.dump());
  return v.get<double>();
}

inline std::int64_t as_int(const std::string& key, const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<double>(static_cast<std::int64_t>(d))) return static_cast<std::int64_t>(d);
  }
  bad(key, "expected an integer, got " + v.dump());
}

inline std::size_t as_count(const std::string& key, const json& v) {
  const auto i = as_int(key, v);
  if (i < 0) bad(key, "expected a non-negative integer, got " + v.dump());
  return static_cast<std::size_t>(i);
}

inline std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad(key, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

inline bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad(key, "expected true or false, got " + v.dump());
  return v.get<bool>();
}

inline std::vector<ScheduleKind> as_schedule_list(const std::string& key, const json& v) {
  std::vector<std::string> names;
  if (v.is_string()) {
    std::stringstream ss(v.get<std::string>());
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) names.push_back(item);
  } else if (v.is_array()) {
    for (const auto& e : v) names.push_back(as_string(key, e));
  } else {
    bad(key, "expected a comma-separated string or array of schedule labels");
  }
  std::vector<ScheduleKind> out;
  for (const auto& n : names) out.push_back(parse_schedule_kind(n));
  return out;
}

enum class Kind { Count, Int, Uint64, Double, String, Bool, Schedule, ScheduleList, OptDouble };

struct Binding {
  std::string key;
  Kind kind;
  std::string help;
  std::function<void(RunSpec&, const json&)> set;
  std::function<json(const RunSpec&)> get;
};

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    auto count = [&b](std::string k, std::string help, auto field) {
      b.push_back({k, Kind::Count, std::move(help),
                   [k, field](RunSpec& s, const json& v) { field(s) = as_count(k, v); },
                   [field](const RunSpec& s) { return json(field(s)); }});
    };
    auto integer = [&b](std::string k, std::string help, auto field) {
      b.push_back({k, Kind::Int, std::move(help),
                   [k, field](RunSpec& s, const json& v) { field(s) = as_int(k, v); },
                   [field](const RunSpec& s) { return json(field(s)); }});
    };
    auto real = [&b](std::string k, std::string help, auto field) {
      b.push_back({k, Kind::Double, std::move(help),
                   [k, field](RunSpec& s, const json& v) { field(s) = as_double(k, v); },
                   [field](const RunSpec& s) { return json(field(s)); }});
    };
    auto text = [&b](std::string k, std::string help, auto field) {
      b.push_back({k, Kind::String, std::move(help),
                   [k, field](RunSpec& s, const json& v) { field(s) = as_string(k, v); },
                   [field](const RunSpec& s) { return json(field(s)); }});
    };

    text("data.corpus", "path to a UTF-8 text corpus", [](auto& s) -> auto& { return s.corpus; });
    real("data.val_fraction", "fraction of the corpus held out for validation",
         [](auto& s) -> auto& { return s.val_fraction; });
    count("model.n_layer", "transformer blocks", [](auto& s) -> auto& { return s.train.model.n_layer; });
    count("model.n_head", "attention heads", [](auto& s) -> auto& { return s.train.model.n_head; });
    count("model.n_embd", "embedding width", [](auto& s) -> auto& { return s.train.model.n_embd; });
    count("model.block_size", "context length",
          [](auto& s) -> auto& { return s.train.model.block_size; });
    b.push_back({"schedule.kind", Kind::Schedule, "baseline|linear|exponential|step|cosine|val_adaptive",
                 [](RunSpec& s, const json& v) { s.train.schedule = parse_schedule_kind(as_string("schedule.kind", v)); },
                 [](const RunSpec& s) { return json(std::string(label(s.train.schedule))); }});
    real("schedule.p0", "initial dropout rate", [](auto& s) -> auto& { return s.train.sched.p0; });
    real("schedule.pf", "final dropout rate", [](auto& s) -> auto& { return s.train.sched.pf; });
    real("schedule.decay_factor", "step-decay multiplier",
         [](auto& s) -> auto& { return s.train.sched.decay_factor; });
    integer("schedule.step_size", "step-decay period in iterations",
            [](auto& s) -> auto& { return s.train.sched.step_size; });
    real("schedule.adapt_delta", "adaptive rate step",
         [](auto& s) -> auto& { return s.train.sched.adapt_delta; });
    real("schedule.adapt_p_min", "adaptive lower bound",
         [](auto& s) -> auto& { return s.train.sched.adapt_p_min; });
    b.push_back({"schedule.adapt_p_max", Kind::OptDouble, "adaptive upper bound (default p0)",
                 [](RunSpec& s, const json& v) {
                   if (v.is_null()) s.train.sched.adapt_p_max.reset();
                   else s.train.sched.adapt_p_max = as_double("schedule.adapt_p_max", v);
                 },
                 [](const RunSpec& s) { return json(s.train.sched.p_max()); }});
    real("schedule.improve_tol", "minimum val-loss decrease that counts as improvement",
         [](auto& s) -> auto& { return s.train.sched.improve_tol; });
    real("schedule.exp_floor_eps", "floor substituted for a zero exponential target",
         [](auto& s) -> auto& { return s.train.sched.exp_floor_eps; });
    count("train.batch_size", "sequences per step", [](auto& s) -> auto& { return s.train.batch_size; });
    real("train.learning_rate", "AdamW step size", [](auto& s) -> auto& { return s.train.learning_rate; });
    integer("train.max_iters", "training iterations", [](auto& s) -> auto& { return s.train.max_iters; });
    integer("train.eval_interval", "iterations between evaluations",
            [](auto& s) -> auto& { return s.train.eval_interval; });
    integer("train.eval_iters", "batches per loss estimate",
            [](auto& s) -> auto& { return s.train.eval_iters; });
    real("train.weight_decay", "decoupled weight decay", [](auto& s) -> auto& { return s.train.weight_decay; });
    real("train.beta1", "AdamW first-moment decay", [](auto& s) -> auto& { return s.train.beta1; });
    real("train.beta2", "AdamW second-moment decay", [](auto& s) -> auto& { return s.train.beta2; });
    real("train.grad_clip", "global gradient-norm bound (0 disables)",
         [](auto& s) -> auto& { return s.train.grad_clip; });
    b.push_back({"train.seed", Kind::Uint64, "run seed",
                 [](RunSpec& s, const json& v) {
                   if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
                     bad("train.seed", "expected a non-negative integer, got " + v.dump());
                   s.train.seed = v.get<std::uint64_t>();
                 },
                 [](const RunSpec& s) { return json(s.train.seed); }});
    b.push_back({"train.lr_decay", Kind::Bool, "cosine-decay the learning rate to min_lr",
                 [](RunSpec& s, const json& v) { s.train.lr_decay = as_bool("train.lr_decay", v); },
                 [](const RunSpec& s) { return json(s.train.lr_decay); }});
    real("train.min_lr", "learning-rate floor when lr_decay is on",
         [](auto& s) -> auto& { return s.train.min_lr; });
    text("out.dir", "output directory", [](auto& s) -> auto& { return s.out_dir; });
    text("out.label", "run label", [](auto& s) -> auto& { return s.label; });
    b.push_back({"compare.schedules", Kind::ScheduleList, "comma-separated schedules for compare",
                 [](RunSpec& s, const json& v) { s.compare_schedules = as_schedule_list("compare.schedules", v); },
                 [](const RunSpec& s) {
                   json arr = json::array();
                   for (auto k : s.compare_schedules) arr.push_back(std::string(label(k)));
                   return arr;
                 }});
    count("bench.n_tokens", "tokens generated per throughput measurement",
          [](auto& s) -> auto& { return s.bench_tokens; });
    return b;
  }();
  return table;
}

inline const Binding* find_exact(std::string_view key) {
  for (const auto& b : bindings())
    if (b.key == key) return &b;
  return nullptr;
}

/// Full key, alias, or unique last-component suffix.
inline const Binding& resolve_key(std::string_view key) {
  static const std::map<std::string, std::string, std::less<>> aliases = {
      {"schedule", "schedule.kind"}, {"schedules", "compare.schedules"}, {"corpus", "data.corpus"},
      {"out", "out.dir"}, {"seed", "train.seed"}};
  if (const auto* b = find_exact(key)) return *b;
  if (auto it = aliases.find(key); it != aliases.end()) return *find_exact(it->second);
  const Binding* hit = nullptr;
  for (const auto& b : bindings()) {
    const auto dot = b.key.rfind('.');
    if (std::string_view(b.key).substr(dot + 1) == key) {
      if (hit) throw ConfigError("ambiguous option '" + std::string(key) + "' (" + hit->key + ", " + b.key + ")");
      hit = &b;
    }
  }
  if (!hit) throw ConfigError("unknown option '" + std::string(key) + "'");
  return *hit;
}

/// Converts command-line text to the JSON type the key expects.
inline json parse_text_value(const Binding& b, const std::string& text) {
  auto number = [&](bool integral) -> json {
    if (integral) {
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) bad(b.key, "expected an integer, got '" + text + "'");
      return v;
    }
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) bad(b.key, "expected a number, got '" + text + "'");
    return v;
  };
  switch (b.kind) {
    case Kind::Count:
    case Kind::Int: return number(true);
    case Kind::Uint64: {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) bad(b.key, "expected an integer, got '" + text + "'");
      return v;
    }
    case Kind::Double: return number(false);
    case Kind::OptDouble: return text == "null" ? json(nullptr) : number(false);
    case Kind::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      bad(b.key, "expected true or false, got '" + text + "'");
    case Kind::String:
    case Kind::Schedule:
    case Kind::ScheduleList: return text;
  }
  return text;
}

}  // namespace config_detail

/// Applies a flat {"dotted.key": value} object; unknown keys are rejected.
inline void apply_config_json(RunSpec& spec, const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a JSON object with dotted keys");
  for (const auto& [k, v] : flat.items()) {
    const auto* b = config_detail::find_exact(k);
    if (!b) throw ConfigError("unknown config key '" + k + "'");
    b->set(spec, v);
  }
}

/// Applies one `--key=value` override (key without the dashes).
inline void apply_override(RunSpec& spec, const std::string& key, const std::string& value) {
  const auto& b = config_detail::resolve_key(key);
  b.set(spec, config_detail::parse_text_value(b, value));
}

/// Every resolved value under its dotted key.
inline nlohmann::json to_flat_json(const RunSpec& spec) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& b : config_detail::bindings()) out[b.key] = b.get(spec);
  return out;
}

inline RunSpec run_spec_from_json(const nlohmann::json& flat) {
  RunSpec spec;
  apply_config_json(spec, flat);
  return spec;
}

inline RunSpec load_run_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_spec_from_json(j);
}

/// Usage text listing every key with its default.
inline std::string config_keys_help() {
  const RunSpec defaults;
  std::string s;
  for (const auto& b : config_detail::bindings()) {
    s += "  --" + b.key + "=" + b.get(defaults).dump() + "\n      " + b.help + "\n";
  }
  return s;
}

}  // namespace droprate
