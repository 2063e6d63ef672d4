// SPDX-License-Identifier: Apache-2.0
//
// tschain: command-line front end for the teacher-student chain experiments.
//
//   tschain synth    [flags]   write synthetic train/validation/test CSVs
//   tschain baseline [flags]   single-model labelled-fraction sweep
//   tschain chain    [flags]   chain experiment (plus baseline reference)
//   tschain report   [flags]   re-aggregate runs.csv / traces.csv
//
// Any configuration key can be given as a flag: `--chain.iterations 3` or
// `--train.learning_rate=1e-4`. Flags override the --config file.
//
// Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tschain/config.hpp"
#include "tschain/experiment.hpp"
#include "tschain/report.hpp"
#include "tschain/text.hpp"

namespace {

using namespace tschain;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct SharedFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--jobs", f.jobs, "parallel (fraction, run) jobs");
  cmd->allow_extras();
}

/// Turns leftover `--key value` / `--key=value` arguments into settings.
void apply_extras(const std::vector<std::string>& extras, Settings& settings) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    settings[key] = value;
  }
}

ExperimentConfig resolve(const SharedFlags& f, const std::vector<std::string>& extras) {
  Settings settings;
  if (!f.config.empty()) settings = load_settings(f.config);
  apply_extras(extras, settings);
  if (f.seed) settings["seed"] = std::to_string(*f.seed);
  if (!f.out.empty()) settings["out"] = f.out;
  if (f.jobs) settings["jobs"] = std::to_string(*f.jobs);
  return build_config(settings);
}

void print_summary(const RunSummary& summary) {
  std::printf("%-9s %-14s %3s %10s %10s %10s %10s\n", "fraction", "mode", "n", "val_mean",
              "val_std", "test_mean", "test_std");
  for (const auto& c : summary.cells) {
    if (!c.val) {
      std::printf("%-9s %-14s %3zu %s\n", format_double(c.fraction).c_str(), c.mode.c_str(), c.n,
                  c.note.c_str());
      continue;
    }
    std::printf("%-9s %-14s %3zu %10.4f %10.4f %10.4f %10.4f %s\n",
                format_double(c.fraction).c_str(), c.mode.c_str(), c.n, c.val->mean, c.val->std,
                c.test->mean, c.test->std, c.note.c_str());
  }
}

int cmd_synth(const ExperimentConfig& cfg) {
  if (cfg.data.kind != DataSource::Kind::synthetic)
    throw ConfigError("synth needs data.source = synthetic");
  const auto data = generate_synthetic(cfg.data.synthetic);
  std::filesystem::create_directories(cfg.out);
  write_table(cfg.out / "train.csv", data.train);
  write_table(cfg.out / "validation.csv", data.validation);
  write_table(cfg.out / "test.csv", data.test);
  std::cout << "wrote " << data.train.size() << " / " << data.validation.size() << " / "
            << data.test.size() << " samples to " << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_experiment(const ExperimentConfig& cfg, bool chain) {
  const auto start = std::chrono::steady_clock::now();
  const auto data = load_experiment_data(cfg);
  ExperimentResult result;
  if (!chain)
    result = run_baseline_sweep(cfg, data);
  else if (cfg.chain_with_baseline)
    result = run_full_experiment(cfg, data);
  else
    result = run_chain_experiment(cfg, data);
  emit_outputs(result, cfg.out, chain ? mode::chain_best : mode::baseline, describe_config(cfg));
  print_summary(result.summary);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "results in " << cfg.out.string() << " (" << format_fixed(secs, 1) << " s)\n";
  return kExitOk;
}

int cmd_report(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir) {
  const auto rows = read_runs_csv(in_dir / "runs.csv");
  std::vector<TraceRow> traces;
  if (std::filesystem::exists(in_dir / "traces.csv")) traces = read_traces_csv(in_dir / "traces.csv");
  const RunSummary summary = aggregate_runs(rows);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "summary.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "summary.csv").string());
    write_summary_csv(out, summary);
  }
  {
    std::ofstream out(out_dir / "chain_curves.svg", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "chain_curves.svg").string());
    out << render_chain_svg(traces, best_baseline_mean(summary));
  }
  print_summary(summary);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-student chain experiments"};
  app.require_subcommand(1);

  SharedFlags synth_f, base_f, chain_f;
  auto* synth = app.add_subcommand("synth", "write synthetic train/validation/test tables");
  add_shared(synth, synth_f);
  auto* baseline = app.add_subcommand("baseline", "labelled-fraction sweep of a single model");
  add_shared(baseline, base_f);
  auto* chain = app.add_subcommand("chain", "teacher-student chain experiment");
  add_shared(chain, chain_f);
  bool dump_pseudo = false;
  chain->add_flag("--dump-pseudo-labels", dump_pseudo,
                  "write filtered pseudo-labels of every iteration");

  auto* report = app.add_subcommand("report", "re-aggregate runs.csv and traces.csv");
  std::string report_in, report_out;
  report->add_option("--in", report_in, "directory holding runs.csv / traces.csv")->required();
  report->add_option("--out", report_out, "output directory (default: --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(resolve(synth_f, synth->remaining()));
    if (*baseline) return cmd_experiment(resolve(base_f, baseline->remaining()), false);
    if (*chain) {
      auto extras = chain->remaining();
      if (dump_pseudo) extras.insert(extras.end(), {"--output.pseudo_labels", "true"});
      return cmd_experiment(resolve(chain_f, extras), true);
    }
    if (*report) return cmd_report(report_in, report_out.empty() ? report_in : report_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
