// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droprate/config.hpp"
#include "droprate/data.hpp"
#include "droprate/report.hpp"
#include "droprate/trainer.hpp"

namespace droprate {

/// Process exit status for an exception escaping a command: 1 for usage,
/// configuration and input problems, 2 for runtime failures.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const InvalidRateError*>(&e) || dynamic_cast<const OutOfRangeError*>(&e))
    return 1;
  return 2;
}

inline SplitDataset load_corpus(const RunSpec& spec) {
  if (spec.corpus.empty()) throw ConfigError("data.corpus is required");
  if (!std::filesystem::is_regular_file(spec.corpus)) throw ConfigError("data.corpus: no such file: " + spec.corpus);
  return load_dataset(spec.corpus, spec.val_fraction);
}

struct TrainOutcome {
  RunResult result;
  std::filesystem::path dir;
};

/// Trains one run into `dir`: run.json (resolved config), metrics.csv, ckpt.bin.
/// Metrics rows already written survive a divergence.
inline TrainOutcome train_into(const RunSpec& spec, const SplitDataset& ds, const std::filesystem::path& dir,
                               std::ostream& log) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "run.json", to_flat_json(spec).dump(2) + "\n");
  MetricsCsvWriter csv(dir / "metrics.csv");
  const std::string name(label(spec.train.schedule));
  auto sink = [&](const MetricsRecord& r) {
    csv(r);
    log << name << " iter " << r.iter << ": train " << format_fixed(r.train_loss, 4) << ", val "
        << format_fixed(r.val_loss, 4) << ", p " << format_exact(r.dropout_p) << ", " << format_fixed(r.elapsed_s, 1)
        << "s\n";
    log.flush();
  };
  TrainOutcome out;
  out.dir = dir;
  out.result = train(spec.train, ds, sink, dir / "ckpt.bin");
  return out;
}

inline TrainOutcome cmd_train(const RunSpec& spec, std::ostream& log) {
  spec.validate();
  const SplitDataset ds = load_corpus(spec);
  return train_into(spec, ds, spec.out_dir, log);
}

/// Mean tokens/sec over `repeats` generations of `n_tokens` from a one-token prompt.
inline double average_inference_speed(Gpt& model, std::int32_t prompt_token, std::size_t n_tokens, int repeats,
                                      std::uint64_t seed) {
  double total = 0.0;
  for (int r = 0; r < repeats; ++r)
    total += measure_inference_speed(model, {prompt_token}, n_tokens,
                                     RngState(seed, streams::kBench, static_cast<std::uint64_t>(r)));
  return total / repeats;
}

inline constexpr int kCompareSpeedRepeats = 3;

/// Trains every requested schedule in turn from the same seed and corpus.
/// Writes <out>/<schedule>/{run.json,metrics.csv,ckpt.bin}, <out>/report.md,
/// <out>/combined.csv and <out>/loss_curves.svg. A divergence stops the loop;
/// what was finished is still written, the report is flagged partial, and the
/// DivergenceError is rethrown.
inline ComparisonReport cmd_compare(const RunSpec& spec, std::ostream& log) {
  spec.validate();
  if (spec.compare_schedules.size() < 2)
    throw ConfigError("compare.schedules: a comparison needs at least 2 schedules");
  for (std::size_t i = 0; i < spec.compare_schedules.size(); ++i)
    for (std::size_t j = i + 1; j < spec.compare_schedules.size(); ++j)
      if (spec.compare_schedules[i] == spec.compare_schedules[j])
        throw ConfigError("compare.schedules: duplicate schedule " + std::string(label(spec.compare_schedules[i])));
  for (auto k : spec.compare_schedules) {
    RunSpec s = spec;
    s.train.schedule = k;
    s.validate();
  }
  const SplitDataset ds = load_corpus(spec);
  const std::filesystem::path out(spec.out_dir);
  std::filesystem::create_directories(out);
  write_text_file(out / "run.json", to_flat_json(spec).dump(2) + "\n");

  ComparisonReport rep;
  std::string combined = std::string(kCombinedCsvHeader) + "\n";
  std::optional<DivergenceError> failure;
  for (auto kind : spec.compare_schedules) {
    RunSpec s = spec;
    s.train.schedule = kind;
    s.label = std::string(label(kind));
    s.out_dir = (out / s.label).string();
    try {
      TrainOutcome t = train_into(s, ds, s.out_dir, log);
      LoadedModel trained = load_model(t.dir / "ckpt.bin");
      const double ais = average_inference_speed(trained.model, static_cast<std::int32_t>(ds.val_ids.front()),
                                                 spec.bench_tokens, kCompareSpeedRepeats, spec.train.seed);
      rep.rows.push_back(comparison_row(s.label, t.result.metrics, t.result.total_train_seconds, ais));
      combined += combined_csv_rows(s.label, t.result.metrics);
    } catch (const DivergenceError& e) {
      ComparisonRow r;
      r.schedule = s.label;
      r.diverged = true;
      r.note = e.what();
      rep.rows.push_back(r);
      rep.partial = true;
      failure = e;
      const auto partial_csv = std::filesystem::path(s.out_dir) / "metrics.csv";
      try {
        combined += combined_csv_rows(s.label, parse_metrics_csv(read_text_file(partial_csv)));
      } catch (const InputError&) {
        // diverged before the first evaluation
      }
      break;
    }
  }

  write_text_file(out / "report.md", render_markdown(rep));
  write_text_file(out / "combined.csv", combined);
  try {
    write_text_file(out / "loss_curves.svg", render_svg(parse_combined_csv(combined)));
  } catch (const InputError&) {
    if (!failure) throw;
  }
  if (failure) throw *failure;
  return rep;
}

/// Converts the escapes \n, \t, \\ in a command-line prompt.
inline std::string unescape_prompt(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char c = s[++i];
      if (c == 'n') out.push_back('\n');
      else if (c == 't') out.push_back('\t');
      else if (c == '\\') out.push_back('\\');
      else {
        out.push_back('\\');
        out.push_back(c);
      }
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

inline std::string cmd_sample(const std::filesystem::path& checkpoint, const std::string& prompt, std::size_t max_new,
                              double temperature, std::optional<std::size_t> top_k, std::uint64_t seed) {
  LoadedModel m = load_model(checkpoint);
  const auto ids = m.vocab.encode_utf8(prompt);
  if (ids.empty()) throw InputError("prompt must contain at least one character");
  RngState rng(seed, streams::kSample);
  const auto out = m.model.generate(std::vector<std::int32_t>(ids.begin(), ids.end()), max_new, temperature, top_k, rng);
  return m.vocab.decode(out);
}

struct BenchSummary {
  std::vector<double> tokens_per_sec;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Times `repeats` generations of `n_tokens` each, prints one row per repeat
/// and a summary, and appends the rows to `csv_path`.
inline BenchSummary cmd_bench(const std::filesystem::path& checkpoint, std::size_t n_tokens, int repeats,
                              const std::filesystem::path& csv_path, std::uint64_t seed, std::ostream& out) {
  if (n_tokens < 500) throw ConfigError("bench: n_tokens must be >= 500");
  if (repeats < 3) throw ConfigError("bench: repeats must be >= 3");
  LoadedModel m = load_model(checkpoint);
  BenchSummary s;
  const bool fresh = !std::filesystem::exists(csv_path);
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw IoError("cannot append to " + csv_path.string());
  if (fresh) csv << "checkpoint,repeat,n_tokens,tokens_per_sec\n";
  for (int r = 0; r < repeats; ++r) {
    const double tps = measure_inference_speed(m.model, {0}, n_tokens,
                                               RngState(seed, streams::kBench, static_cast<std::uint64_t>(r)));
    s.tokens_per_sec.push_back(tps);
    out << "repeat " << r << ": " << format_fixed(tps, 2) << " tokens/sec\n";
    csv << checkpoint.string() << "," << r << "," << n_tokens << "," << format_fixed(tps, 2) << "\n";
  }
  if (!csv) throw IoError("write failed for " + csv_path.string());
  s.min = *std::min_element(s.tokens_per_sec.begin(), s.tokens_per_sec.end());
  s.max = *std::max_element(s.tokens_per_sec.begin(), s.tokens_per_sec.end());
  for (double v : s.tokens_per_sec) s.mean += v;
  s.mean /= static_cast<double>(repeats);
  out << "summary: mean " << format_fixed(s.mean, 2) << ", min " << format_fixed(s.min, 2) << ", max "
      << format_fixed(s.max, 2) << " tokens/sec\n";
  return s;
}

inline void cmd_plot(const std::filesystem::path& csv, const std::filesystem::path& out) {
  write_text_file(out, render_svg(parse_combined_csv(read_text_file(csv))));
}

}  // namespace droprate
