// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: labelled-fraction sweeps of the single-model baseline
// and of the teacher-student chain, repeated over seeded runs and aggregated
// to mean / std / min / max.
//
// Seed derivation (all from the master seed `cfg.seed`):
//   synthetic data   data.seed, defaulting to the master seed
//   split of a cell  derive_seed(derive_seed(master, "split"), cell)
//   models of a cell derive_seed(derive_seed(master, "model"), cell)
// where cell = derive_seed(bits of the fraction value, run index). The chain
// of a cell uses the model seed as its base seed, so its teacher equals the
// baseline model of the same cell whenever the fine-tune and train settings
// agree.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tschain/config.hpp"

namespace tschain {

namespace mode {
inline constexpr const char* baseline = "baseline";
inline constexpr const char* chain_teacher = "chain_teacher";
inline constexpr const char* chain_best = "chain_best";
inline constexpr const char* chain_final = "chain_final";
}  // namespace mode

/// Sort rank of a mode name: baseline, chain_teacher, chain_best,
/// chain_final, then anything else alphabetically.
int mode_rank(const std::string& mode);

enum class RunStatus { ok, skipped, failed };
const char* to_string(RunStatus s);
std::optional<RunStatus> run_status_from_string(const std::string& s);

struct RunRow {
  double fraction = 0.0;
  std::string mode;
  std::size_t run = 0;
  RunStatus status = RunStatus::ok;
  std::string reason;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  /// Chain modes: iteration the row refers to.
  std::optional<std::size_t> iteration;
};

struct TraceRow {
  std::size_t run = 0;
  double fraction = 0.0;
  std::size_t iteration = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t pseudo_count = 0;
  std::optional<double> pseudo_agreement;
};

struct ConfusionDump {
  double fraction = 0.0;
  std::size_t run = 0;
  std::string mode;
  ConfusionMatrix confusion{2};
};

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample std (n - 1); 0 when n = 1
  double min = 0.0;
  double max = 0.0;
};

/// mean / sample std / min / max of a non-empty list.
Stats summarize(const std::vector<double>& values);

struct SummaryCell {
  double fraction = 0.0;
  std::string mode;
  std::size_t n = 0;       // successful runs aggregated
  std::size_t total = 0;   // rows in the group, including skipped/failed
  std::optional<Stats> val;
  std::optional<Stats> test;
  std::string note;        // "n=1", "no successful runs", ...
};

struct RunSummary {
  std::vector<SummaryCell> cells;
  /// Every (fraction, mode, run) row in deterministic order.
  std::vector<RunRow> rows;

  const SummaryCell* find(double fraction, const std::string& mode) const;
};

/// Groups by (fraction, mode) and aggregates the ok rows of each group.
RunSummary aggregate_runs(std::vector<RunRow> rows);

struct ExperimentResult {
  RunSummary summary;
  std::vector<TraceRow> traces;
  std::vector<ConfusionDump> confusions;
  std::vector<std::string> class_names;
};

struct ExperimentData {
  DataTable train;
  DataTable validation;
  DataTable test;
};

/// Synthetic generation or file loading per cfg.data.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Split seed and model seed of one (fraction, run) cell.
std::uint64_t cell_split_seed(std::uint64_t master, double fraction, std::size_t run);
std::uint64_t cell_model_seed(std::uint64_t master, double fraction, std::size_t run);

/// Labelled fraction actually requested from the splitter: fraction 1.0
/// means "everything left after the early-stop reserve".
double effective_labelled_fraction(double fraction, double early_stop_fraction);

ExperimentResult run_baseline_sweep(const ExperimentConfig& cfg, const ExperimentData& data);
ExperimentResult run_chain_experiment(const ExperimentConfig& cfg, const ExperimentData& data);

/// Baseline sweep plus chain experiment (the chain command's default).
ExperimentResult run_full_experiment(const ExperimentConfig& cfg, const ExperimentData& data);

/// Concatenates and re-aggregates.
ExperimentResult merge_results(ExperimentResult a, const ExperimentResult& b);

}  // namespace tschain
