// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droprate/checkpoint.hpp"
#include "droprate/config.hpp"
#include "droprate/data.hpp"
#include "droprate/model.hpp"
#include "droprate/optim.hpp"
#include "droprate/schedule.hpp"

namespace droprate {

/// One evaluation point of a run.
struct MetricsRecord {
  std::int64_t iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double dropout_p = 0.0;
  double elapsed_s = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  double total_train_seconds = 0.0;
  std::filesystem::path checkpoint;
  std::uint64_t dropout_updates = 0;  // update_dropout calls made by this run
  bool completed = false;             // false when stopped early via stop_at
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

namespace streams {
inline constexpr std::uint64_t kBatch = 0xBA7C;
inline constexpr std::uint64_t kEvalTrain = 0xE7A1;
inline constexpr std::uint64_t kEvalVal = 0xE7A2;
inline constexpr std::uint64_t kBench = 0xBE4C;
}  // namespace streams

/// Mean eval-mode loss over `eval_iters` batches drawn from `rng`.
inline double estimate_loss(Gpt& model, const SplitDataset& ds, Split split, std::int64_t eval_iters,
                            std::size_t batch_size, RngState rng) {
  double total = 0.0;
  for (std::int64_t i = 0; i < eval_iters; ++i) {
    const Batch b = sample_batch(ds, split, batch_size, model.config().block_size, rng);
    total += model.loss(b.x, b.y);
  }
  return total / static_cast<double>(eval_iters);
}

/// Tokens per second of sampled generation, excluding setup.
inline double measure_inference_speed(Gpt& model, std::vector<std::int32_t> prompt, std::size_t n_tokens,
                                      RngState rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = model.generate(std::move(prompt), n_tokens, 1.0, std::nullopt, rng);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  (void)out;
  return static_cast<double>(n_tokens) / std::max(s, 1e-9);
}

/// The training loop. Holds everything needed to pause and resume a run
/// bit-exactly: parameters, optimizer moments, batch RNG, adaptive-schedule
/// state, recorded metrics and the next iteration.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const SplitDataset& ds)
      : cfg_(std::move(cfg)), ds_(&ds), sched_(cfg_.schedule_config()) {
    cfg_.model.vocab_size = ds.vocab.size();
    cfg_.model.dropout_p = cfg_.sched.p0;
    cfg_.validate();
    model_ = Gpt::init(cfg_.model, cfg_.seed);
    opt_ = AdamW<float>(model_.params());
    batch_rng_ = RngState(cfg_.seed, streams::kBatch);
    if (cfg_.schedule == ScheduleKind::ValLossAdaptive) adaptive_ = AdaptiveState::initial(sched_);
  }

  static Trainer resume(const std::filesystem::path& path, const SplitDataset& ds) {
    const CheckpointData ck = read_checkpoint(path);
    const auto& h = ck.header;
    try {
      const Vocab vocab = Vocab::from_chars(utf8::decode(h.at("vocab").get<std::string>()));
      if (!(vocab == ds.vocab)) throw CheckpointError("checkpoint vocabulary does not match the corpus");
      Trainer t(train_config_from_header(h), ds);
      t.load_params(ck);
      if (!ck.optimizer_steps) throw CheckpointError("checkpoint has no optimizer state; cannot resume");
      t.opt_.restore(*ck.optimizer_steps, ck.m, ck.v);
      t.next_iter_ = h.at("iteration").get<std::int64_t>();
      t.batch_rng_ = rng_from_json(h.at("rng"));
      t.elapsed_offset_ = h.at("elapsed_s").get<double>();
      t.model_.update_dropout(h.at("current_dropout").get<double>());
      t.updates_at_start_ = t.model_.dropout_update_count();
      if (const auto& a = h.at("adaptive"); !a.is_null()) {
        AdaptiveState s;
        s.current_p = a.at("current_p").get<double>();
        s.best_val_loss = a.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                          : a.at("best_val_loss").get<double>();
        s.evals_seen = a.at("evals_seen").get<std::int64_t>();
        t.adaptive_ = s;
      }
      for (const auto& r : h.at("metrics"))
        t.metrics_.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<double>(), r.at(2).get<double>(),
                              r.at(3).get<double>(), r.at(4).get<double>()});
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint header missing training state: ") + e.what());
    }
  }

  /// Learning rate at iteration t: constant, or cosine-decayed to min_lr.
  double learning_rate_at(std::int64_t t) const {
    if (!cfg_.lr_decay) return cfg_.learning_rate;
    const double f = static_cast<double>(t) / static_cast<double>(cfg_.max_iters);
    return cfg_.min_lr + (cfg_.learning_rate - cfg_.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
  }

  /// Runs iterations [next_iter, max_iters), or up to `stop_at` if given.
  /// At every eval_interval-th iteration and at the last one, estimates
  /// train/val loss, feeds the adaptive controller, and emits a record.
  /// Writes `checkpoint` (if non-empty) when the loop ends.
  RunResult run(const MetricsSink& sink = {}, std::optional<std::int64_t> stop_at = std::nullopt,
                const std::filesystem::path& checkpoint = {}) {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return elapsed_offset_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    const std::int64_t end = stop_at ? std::min(*stop_at, cfg_.max_iters) : cfg_.max_iters;
    const std::size_t seq = cfg_.model.block_size;
    AdamWConfig ocfg{cfg_.learning_rate, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay};

    for (std::int64_t t = next_iter_; t < end; ++t) {
      const bool eval_now = t % cfg_.eval_interval == 0 || t == cfg_.max_iters - 1;
      double train_loss = 0.0, val_loss = 0.0;
      if (eval_now) {
        train_loss = estimate_loss(model_, *ds_, Split::Train, cfg_.eval_iters, cfg_.batch_size,
                                   RngState(cfg_.seed, streams::kEvalTrain, static_cast<std::uint64_t>(t)));
        val_loss = estimate_loss(model_, *ds_, Split::Val, cfg_.eval_iters, cfg_.batch_size,
                                 RngState(cfg_.seed, streams::kEvalVal, static_cast<std::uint64_t>(t)));
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
          throw DivergenceError(t, "non-finite evaluation loss");
        }
        if (adaptive_) {
          adaptive_ = adaptive_->evals_seen == 0 ? adaptive_seed(*adaptive_, val_loss)
                                                 : adaptive_update(*adaptive_, val_loss, sched_).first;
        }
      }

      const double p = rate_at(cfg_.schedule, t, sched_, adaptive_ ? &*adaptive_ : nullptr);
      model_.update_dropout(p);

      if (eval_now) {
        MetricsRecord rec{t, train_loss, val_loss, p, elapsed()};
        metrics_.push_back(rec);
        if (sink) sink(rec);
      }

      const Batch batch = sample_batch(*ds_, Split::Train, cfg_.batch_size, seq, batch_rng_);
      model_.params().zero_grad();
      {
        Tape<float> tape;
        auto out = model_.forward(tape, batch.x, batch.y, true,
                                  RngState(cfg_.seed, streams::kDropout, static_cast<std::uint64_t>(t)));
        const float loss = tape.value(*out.loss)[0];
        if (!std::isfinite(loss)) throw DivergenceError(t, "non-finite training loss");
        tape.backward(*out.loss);
      }
      if (cfg_.grad_clip > 0.0) clip_grad_norm(model_.params(), cfg_.grad_clip);
      opt_.step(model_.params(), ocfg, learning_rate_at(t));
      next_iter_ = t + 1;
    }

    elapsed_offset_ = elapsed();
    RunResult r;
    r.metrics = metrics_;
    r.total_train_seconds = elapsed_offset_;
    r.dropout_updates = model_.dropout_update_count() - updates_at_start_;
    r.completed = next_iter_ >= cfg_.max_iters;
    if (!metrics_.empty()) {
      r.final_train_loss = metrics_.back().train_loss;
      r.best_val_loss = std::min_element(metrics_.begin(), metrics_.end(), [](const auto& a, const auto& b) {
                          return a.val_loss < b.val_loss;
                        })->val_loss;
    }
    if (!checkpoint.empty()) {
      save_checkpoint(checkpoint);
      r.checkpoint = checkpoint;
    }
    return r;
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    nlohmann::json h;
    h["format"] = "droprate-gpt";
    h["model"] = model_json(cfg_.model);
    h["vocab"] = utf8::encode(ds_->vocab.chars());
    h["config"] = train_config_json(cfg_);
    h["iteration"] = next_iter_;
    h["current_dropout"] = model_.current_dropout();
    h["rng"] = {{"seed", batch_rng_.seed}, {"stream", batch_rng_.stream}, {"counter", batch_rng_.counter}};
    h["elapsed_s"] = elapsed_offset_;
    if (adaptive_) {
      h["adaptive"] = {{"current_p", adaptive_->current_p},
                       {"best_val_loss", std::isfinite(adaptive_->best_val_loss)
                                             ? nlohmann::json(adaptive_->best_val_loss)
                                             : nlohmann::json(nullptr)},
                       {"evals_seen", adaptive_->evals_seen}};
    } else {
      h["adaptive"] = nullptr;
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : metrics_) rows.push_back({m.iter, m.train_loss, m.val_loss, m.dropout_p, m.elapsed_s});
    h["metrics"] = rows;
    write_checkpoint(path, h, model_.params(), &opt_);
  }

  Gpt& model() noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::int64_t next_iter() const noexcept { return next_iter_; }
  const std::optional<AdaptiveState>& adaptive_state() const noexcept { return adaptive_; }
  const std::vector<MetricsRecord>& metrics() const noexcept { return metrics_; }
  const AdamW<float>& optimizer() const noexcept { return opt_; }

  static nlohmann::json model_json(const ModelConfig& m) {
    return {{"n_layer", m.n_layer},       {"n_head", m.n_head},         {"n_embd", m.n_embd},
            {"block_size", m.block_size}, {"vocab_size", m.vocab_size}, {"dropout_p", m.dropout_p}};
  }

  static ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.n_layer = j.at("n_layer").get<std::size_t>();
    m.n_head = j.at("n_head").get<std::size_t>();
    m.n_embd = j.at("n_embd").get<std::size_t>();
    m.block_size = j.at("block_size").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.dropout_p = j.at("dropout_p").get<double>();
    return m;
  }

  /// Flat model./schedule./train. keys of the run configuration.
  static nlohmann::json train_config_json(const TrainConfig& cfg) {
    RunSpec spec;
    spec.train = cfg;
    const nlohmann::json flat = to_flat_json(spec);
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : flat.items())
      if (k.starts_with("model.") || k.starts_with("schedule.") || k.starts_with("train.")) out[k] = v;
    return out;
  }

  static TrainConfig train_config_from_header(const nlohmann::json& h) {
    TrainConfig cfg = run_spec_from_json(h.at("config")).train;
    cfg.model = model_from_json(h.at("model"));
    return cfg;
  }

 private:
  Trainer() = default;

  static RngState rng_from_json(const nlohmann::json& j) {
    return {j.at("seed").get<std::uint64_t>(), j.at("stream").get<std::uint64_t>(), j.at("counter").get<std::uint64_t>()};
  }

  void load_params(const CheckpointData& ck) {
    auto& params = model_.params();
    if (ck.tensors.size() != params.size()) throw CheckpointError("checkpoint tensor count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, value] = ck.tensors[i];
      if (name != params.name(i) || !(value.shape() == params.value(i).shape()))
        throw CheckpointError("checkpoint tensor " + name + " " + value.shape().str() + " does not match " +
                              params.name(i) + " " + params.value(i).shape().str());
      params.value(i) = value;
    }
  }

  TrainConfig cfg_;
  const SplitDataset* ds_ = nullptr;
  ScheduleConfig sched_;
  Gpt model_;
  AdamW<float> opt_;
  RngState batch_rng_;
  std::optional<AdaptiveState> adaptive_;
  std::vector<MetricsRecord> metrics_;
  std::int64_t next_iter_ = 0;
  double elapsed_offset_ = 0.0;
  std::uint64_t updates_at_start_ = 0;
};

inline RunResult train(const TrainConfig& cfg, const SplitDataset& ds, const MetricsSink& sink = {},
                       const std::filesystem::path& checkpoint = {}) {
  Trainer t(cfg, ds);
  return t.run(sink, std::nullopt, checkpoint);
}

/// A model and vocabulary restored from any checkpoint (for sampling/benchmarks).
struct LoadedModel {
  Gpt model;
  Vocab vocab;
  std::int64_t iteration = 0;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  const CheckpointData ck = read_checkpoint(path);
  try {
    LoadedModel out;
    out.vocab = Vocab::from_chars(utf8::decode(ck.header.at("vocab").get<std::string>()));
    out.model = Gpt::init(Trainer::model_from_json(ck.header.at("model")), 0);
    out.iteration = ck.header.value("iteration", std::int64_t{0});
    auto& params = out.model.params();
    if (ck.tensors.size() != params.size()) throw CheckpointError("checkpoint tensor count does not match its model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (ck.tensors[i].first != params.name(i) || !(ck.tensors[i].second.shape() == params.value(i).shape()))
        throw CheckpointError("checkpoint tensor " + ck.tensors[i].first + " does not match " + params.name(i));
      params.value(i) = ck.tensors[i].second;
    }
    out.model.update_dropout(ck.header.at("current_dropout").get<double>());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics CSV: iter,train_loss,val_loss,dropout_p,elapsed_s

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// Shortest representation that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

inline constexpr const char* kMetricsCsvHeader = "iter,train_loss,val_loss,dropout_p,elapsed_s";

inline std::string metrics_csv_row(const MetricsRecord& r) {
  return std::to_string(r.iter) + "," + format_fixed(r.train_loss, 4) + "," + format_fixed(r.val_loss, 4) + "," +
         format_exact(r.dropout_p) + "," + format_fixed(r.elapsed_s, 2);
}

class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << kMetricsCsvHeader << "\n";
    out_.flush();
  }

  void operator()(const MetricsRecord& r) {
    out_ << metrics_csv_row(r) << "\n";
    out_.flush();
    if (!out_) throw IoError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace droprate
