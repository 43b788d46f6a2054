// SPDX-License-Identifier: Apache-2.0
//
// droprate train|compare|sample|bench|plot
//
// train and compare take `--config PATH` plus any number of `--key=value`
// overrides (see `droprate train --help`).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "droprate/droprate.hpp"

namespace {

using namespace droprate;

RunSpec resolve_spec(const std::string& config_path, const std::vector<std::string>& extras) {
  RunSpec spec = config_path.empty() ? RunSpec{} : load_run_spec(config_path);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      apply_override(spec, arg.substr(2, eq - 2), arg.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      apply_override(spec, arg.substr(2), extras[i + 1]);
      ++i;
    } else {
      throw ConfigError("override '" + arg + "' needs a value (--key=value)");
    }
  }
  spec.validate();
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large buffers every iteration; keep
  // them on the heap instead of returning pages to the kernel each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Dynamic dropout training lab for a character-level GPT"};
  app.require_subcommand(1);
  const std::string keys = "\nConfiguration keys (--key=value overrides; unique suffixes accepted):\n" +
                           config_keys_help();

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train one run; writes metrics.csv, ckpt.bin and run.json");
  train->add_option("--config", config_path, "Flat JSON config file");
  train->allow_extras();
  train->footer(keys);

  auto* compare = app.add_subcommand("compare", "Train each schedule in turn and write a comparison report");
  compare->add_option("--config", config_path, "Flat JSON config file");
  compare->allow_extras();
  compare->footer(keys);

  std::string ckpt, prompt = "\\n";
  std::size_t max_new = 500;
  double temperature = 1.0;
  std::optional<std::size_t> top_k;
  std::uint64_t seed = 1337;
  auto* sample = app.add_subcommand("sample", "Generate text from a checkpoint");
  sample->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  sample->add_option("--prompt", prompt, "Prompt text; \\n and \\t escapes are decoded")->capture_default_str();
  sample->add_option("--max-new", max_new, "Tokens to generate")->capture_default_str();
  sample->add_option("--temperature", temperature, "Softmax temperature")->capture_default_str();
  sample->add_option("--top-k", top_k, "Sample only among the k most likely tokens");
  sample->add_option("--seed", seed, "Sampling seed")->capture_default_str();

  std::size_t n_tokens = 500;
  int repeats = 3;
  std::string bench_csv;
  auto* bench = app.add_subcommand("bench", "Measure generation throughput of a checkpoint");
  bench->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  bench->add_option("--n-tokens", n_tokens, "Tokens per measurement (>= 500)")->capture_default_str();
  bench->add_option("--repeats", repeats, "Number of measurements (>= 3)")->capture_default_str();
  bench->add_option("--csv", bench_csv, "CSV to append to (default: bench.csv next to the checkpoint)");
  bench->add_option("--seed", seed, "Sampling seed")->capture_default_str();

  std::string plot_in, plot_out = "loss_curves.svg";
  auto* plot = app.add_subcommand("plot", "Render a combined metrics CSV as an SVG loss chart");
  plot->add_option("--input", plot_in, "Combined CSV (schedule,iter,train_loss,val_loss,dropout_p)")->required();
  plot->add_option("--output", plot_out, "SVG output path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      const RunSpec spec = resolve_spec(config_path, train->remaining());
      const auto out = cmd_train(spec, std::cerr);
      std::cout << "final train loss " << format_fixed(out.result.final_train_loss, 4) << ", best val loss "
                << format_fixed(out.result.best_val_loss, 4) << "; artifacts in " << out.dir.string() << "\n";
    } else if (*compare) {
      const RunSpec spec = resolve_spec(config_path, compare->remaining());
      const auto rep = cmd_compare(spec, std::cerr);
      std::cout << render_markdown(rep);
    } else if (*sample) {
      std::cout << cmd_sample(ckpt, unescape_prompt(prompt), max_new, temperature, top_k, seed) << "\n";
    } else if (*bench) {
      const std::filesystem::path csv =
          bench_csv.empty() ? std::filesystem::path(ckpt).parent_path() / "bench.csv" : std::filesystem::path(bench_csv);
      cmd_bench(ckpt, n_tokens, repeats, csv, seed, std::cout);
    } else if (*plot) {
      cmd_plot(plot_in, plot_out);
      std::cout << "wrote " << plot_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
