// SPDX-License-Identifier: Apache-2.0
//
// CSV and SVG emission for experiment results, and re-reading the per-run
// CSVs for re-aggregation.

#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tschain/experiment.hpp"

namespace tschain {

inline constexpr const char* kSummaryHeader =
    "fraction,mode,n,runs,val_mean,val_std,val_min,val_max,test_mean,test_std,test_min,test_max,"
    "note";
inline constexpr const char* kRunsHeader =
    "fraction,mode,run,status,iteration,val_accuracy,test_accuracy,reason";
inline constexpr const char* kTracesHeader =
    "run,fraction,iteration,val_accuracy,test_accuracy,pseudo_count,pseudo_agreement";

void write_summary_csv(std::ostream& out, const RunSummary& summary);
void write_runs_csv(std::ostream& out, const std::vector<RunRow>& rows);
void write_traces_csv(std::ostream& out, const std::vector<TraceRow>& traces);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names);

std::vector<RunRow> read_runs_csv(const std::filesystem::path& path);
std::vector<TraceRow> read_traces_csv(const std::filesystem::path& path);

/// Highest mean test accuracy among baseline cells, if any.
std::optional<double> best_baseline_mean(const RunSummary& summary);

/// One panel per fraction with one polyline per run (x = iteration,
/// y = test accuracy) and a dashed line at `reference` when given.
std::string render_chain_svg(const std::vector<TraceRow>& traces, std::optional<double> reference);

/// Writes summary.csv, runs.csv, traces.csv, confusion_<fraction>_<run>.csv
/// (for `primary_mode`; other modes get a `<mode>_` prefix), chain_curves.svg
/// and config.txt into `out_dir`.
void emit_outputs(const ExperimentResult& result, const std::filesystem::path& out_dir,
                  const std::string& primary_mode, const std::string& config_text);

}  // namespace tschain
