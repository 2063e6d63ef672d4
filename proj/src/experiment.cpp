// SPDX-License-Identifier: Apache-2.0

#include "tschain/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "tschain/rng.hpp"
#include "tschain/text.hpp"

namespace tschain {

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c6974;  // "split"
constexpr std::uint64_t kModelStream = 0x6d6f64656c;  // "model"

struct CellOutput {
  std::vector<RunRow> rows;
  std::vector<TraceRow> traces;
  std::vector<ConfusionDump> confusions;
};

struct Cell {
  double fraction;
  std::size_t run;
};

std::vector<Cell> make_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (double f : cfg.fractions)
    for (std::size_t r = 0; r < cfg.runs; ++r) cells.push_back({f, r});
  return cells;
}

/// Runs fn(i) for every i in [0, n) on up to `jobs` threads. Outputs are
/// stored by index so the thread count never changes the result.
template <typename Fn>
std::vector<CellOutput> run_cells(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<CellOutput> out(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

struct PreparedCell {
  SplitResult splits;
  DataTable validation;
  DataTable test;
};

// Statistics come from the labelled split only.
PreparedCell prepare(SplitResult splits, const ExperimentData& data) {
  const Normalizer norm = fit_normalizer(splits.labelled);
  splits.labelled = norm.apply(splits.labelled);
  splits.early_stop = norm.apply(splits.early_stop);
  splits.pool = norm.apply(splits.pool);
  return {std::move(splits), norm.apply(data.validation), norm.apply(data.test)};
}

ArchSpec resolved_arch(const ExperimentConfig& cfg, const ExperimentData& data) {
  ArchSpec a = cfg.arch;
  a.input_dim = data.train.dim();
  a.output_dim = data.train.num_classes();
  a.validate();
  return a;
}

SplitSpec split_spec(const ExperimentConfig& cfg, const Cell& cell) {
  return SplitSpec{effective_labelled_fraction(cell.fraction, cfg.early_stop_fraction),
                   cfg.early_stop_fraction, cell_split_seed(cfg.seed, cell.fraction, cell.run),
                   cfg.balance_labelled};
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

CellOutput baseline_cell(const ExperimentConfig& cfg, const ExperimentData& data,
                         const ArchSpec& arch, const Cell& cell) {
  CellOutput out;
  RunRow row{cell.fraction, mode::baseline, cell.run, RunStatus::ok, "", 0.0, 0.0, std::nullopt};
  std::optional<SplitResult> splits;
  try {
    splits = make_splits(data.train, split_spec(cfg, cell));
  } catch (const std::invalid_argument& e) {
    row.status = RunStatus::skipped;
    row.reason = one_line(e.what());
    out.rows.push_back(row);
    return out;
  }
  try {
    const PreparedCell prepared = prepare(std::move(*splits), data);
    const ModelParams model = train_teacher(prepared.splits, arch, cfg.train,
                                            cell_model_seed(cfg.seed, cell.fraction, cell.run));
    row.val_accuracy = evaluate(model, prepared.validation).accuracy;
    const Evaluation test = evaluate(model, prepared.test);
    row.test_accuracy = test.accuracy;
    out.confusions.push_back({cell.fraction, cell.run, mode::baseline, test.confusion});
  } catch (const std::exception& e) {
    row.status = RunStatus::failed;
    row.reason = one_line(e.what());
  }
  out.rows.push_back(row);
  return out;
}

CellOutput chain_cell(const ExperimentConfig& cfg, const ExperimentData& data,
                      const ArchSpec& arch, const Cell& cell) {
  CellOutput out;
  const auto rows_with = [&](RunStatus status, const std::string& reason) {
    for (const char* m : {mode::chain_teacher, mode::chain_best, mode::chain_final})
      out.rows.push_back({cell.fraction, m, cell.run, status, one_line(reason), 0.0, 0.0,
                          std::nullopt});
  };
  std::optional<SplitResult> splits;
  try {
    splits = make_splits(data.train, split_spec(cfg, cell));
  } catch (const std::invalid_argument& e) {
    rows_with(RunStatus::skipped, e.what());
    return out;
  }
  if (splits->pool.empty()) {
    rows_with(RunStatus::skipped, "empty pool");
    return out;
  }

  ChainResult chain;
  try {
    const PreparedCell prepared = prepare(std::move(*splits), data);
    ChainConfig cc = cfg.chain;
    cc.seed = cell_model_seed(cfg.seed, cell.fraction, cell.run);
    if (cfg.k_pool_fraction) {
      const double per_class = *cfg.k_pool_fraction * static_cast<double>(prepared.splits.pool.size()) /
                               static_cast<double>(prepared.splits.pool.num_classes());
      cc.distill.k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(per_class)));
    }
    PseudoLabelObserver observer;
    if (cfg.dump_pseudo_labels) {
      const auto dir = cfg.out / "pseudo_labels";
      std::filesystem::create_directories(dir);
      const std::size_t classes = data.train.num_classes();
      observer = [dir, cell, classes](std::size_t iteration, std::span<const PseudoLabel> labels) {
        write_pseudo_labels(dir / ("pseudo_" + format_double(cell.fraction) + "_" +
                                   std::to_string(cell.run) + "_" + std::to_string(iteration) +
                                   ".csv"),
                            labels, classes);
      };
    }
    chain = run_chain(prepared.splits, prepared.validation, prepared.test, arch, cc, observer);
  } catch (const std::exception& e) {
    rows_with(RunStatus::failed, e.what());
    return out;
  }

  for (const auto& r : chain.records)
    out.traces.push_back({cell.run, cell.fraction, r.iteration, r.val_accuracy, r.test_accuracy,
                          r.pseudo_count, r.pseudo_agreement});
  if (chain.records.empty()) {
    rows_with(RunStatus::failed, chain.failure.value_or("no iterations completed"));
    return out;
  }
  const RunStatus status = chain.failure ? RunStatus::failed : RunStatus::ok;
  const std::string reason = one_line(chain.failure.value_or(""));
  const auto row_for = [&](const char* m, const IterationRecord& rec) {
    out.rows.push_back({cell.fraction, m, cell.run, status, reason, rec.val_accuracy,
                        rec.test_accuracy, rec.iteration});
  };
  const IterationRecord& best = chain.records[chain.best_iteration];
  row_for(mode::chain_teacher, chain.records.front());
  row_for(mode::chain_best, best);
  row_for(mode::chain_final, chain.records.back());
  out.confusions.push_back({cell.fraction, cell.run, mode::chain_best, best.test_confusion});
  return out;
}

ExperimentResult collect(std::vector<CellOutput> cells, const ExperimentData& data) {
  ExperimentResult result;
  std::vector<RunRow> rows;
  for (auto& c : cells) {
    rows.insert(rows.end(), c.rows.begin(), c.rows.end());
    result.traces.insert(result.traces.end(), c.traces.begin(), c.traces.end());
    result.confusions.insert(result.confusions.end(), c.confusions.begin(), c.confusions.end());
  }
  result.summary = aggregate_runs(std::move(rows));
  result.class_names = data.train.catalog().names();
  return result;
}

}  // namespace

int mode_rank(const std::string& m) {
  if (m == mode::baseline) return 0;
  if (m == mode::chain_teacher) return 1;
  if (m == mode::chain_best) return 2;
  if (m == mode::chain_final) return 3;
  return 4;
}

const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::skipped: return "skipped";
    case RunStatus::failed: return "failed";
  }
  return "failed";
}

std::optional<RunStatus> run_status_from_string(const std::string& s) {
  if (s == "ok") return RunStatus::ok;
  if (s == "skipped") return RunStatus::skipped;
  if (s == "failed") return RunStatus::failed;
  return std::nullopt;
}

Stats summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty list");
  const double n = static_cast<double>(values.size());
  Stats s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  // Rounding in the mean can step outside [min, max] for equal values.
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

const SummaryCell* RunSummary::find(double fraction, const std::string& m) const {
  for (const auto& c : cells)
    if (c.fraction == fraction && c.mode == m) return &c;
  return nullptr;
}

RunSummary aggregate_runs(std::vector<RunRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    if (a.fraction != b.fraction) return a.fraction < b.fraction;
    if (mode_rank(a.mode) != mode_rank(b.mode)) return mode_rank(a.mode) < mode_rank(b.mode);
    if (a.mode != b.mode) return a.mode < b.mode;
    return a.run < b.run;
  });
  RunSummary summary;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    std::vector<double> val, test;
    while (j < rows.size() && rows[j].fraction == rows[i].fraction && rows[j].mode == rows[i].mode) {
      if (rows[j].status == RunStatus::ok) {
        val.push_back(rows[j].val_accuracy);
        test.push_back(rows[j].test_accuracy);
      }
      ++j;
    }
    SummaryCell cell;
    cell.fraction = rows[i].fraction;
    cell.mode = rows[i].mode;
    cell.n = val.size();
    cell.total = j - i;
    if (!val.empty()) {
      cell.val = summarize(val);
      cell.test = summarize(test);
    }
    if (cell.n == 0)
      cell.note = "no successful runs";
    else if (cell.n == 1)
      cell.note = "n=1";
    if (cell.n > 0 && cell.n < cell.total)
      cell.note += std::string(cell.note.empty() ? "" : ";") + std::to_string(cell.total - cell.n) +
                   " runs excluded";
    summary.cells.push_back(std::move(cell));
    i = j;
  }
  summary.rows = std::move(rows);
  return summary;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.data.kind == DataSource::Kind::synthetic) {
    auto d = generate_synthetic(cfg.data.synthetic);
    return {std::move(d.train), std::move(d.validation), std::move(d.test)};
  }
  DataTable train = read_table(cfg.data.train);
  DataTable validation = read_table(cfg.data.validation, train.catalog());
  DataTable test = read_table(cfg.data.test, train.catalog());
  if (validation.dim() != train.dim() || test.dim() != train.dim())
    throw std::invalid_argument("train, validation and test tables have different dimensions");
  if (!validation.fully_labelled() || !test.fully_labelled())
    throw std::invalid_argument("validation and test tables must be fully labelled");
  return {std::move(train), std::move(validation), std::move(test)};
}

std::uint64_t cell_split_seed(std::uint64_t master, double fraction, std::size_t run) {
  return derive_seed(derive_seed(master, kSplitStream),
                     derive_seed(std::bit_cast<std::uint64_t>(fraction), run));
}

std::uint64_t cell_model_seed(std::uint64_t master, double fraction, std::size_t run) {
  return derive_seed(derive_seed(master, kModelStream),
                     derive_seed(std::bit_cast<std::uint64_t>(fraction), run));
}

double effective_labelled_fraction(double fraction, double early_stop_fraction) {
  return std::min(fraction, 1.0 - early_stop_fraction);
}

ExperimentResult run_baseline_sweep(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  const ArchSpec arch = resolved_arch(cfg, data);
  const auto cells = make_cells(cfg);
  return collect(run_cells(cells.size(), cfg.jobs,
                           [&](std::size_t i) { return baseline_cell(cfg, data, arch, cells[i]); }),
                 data);
}

ExperimentResult run_chain_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  const ArchSpec arch = resolved_arch(cfg, data);
  const auto cells = make_cells(cfg);
  return collect(run_cells(cells.size(), cfg.jobs,
                           [&](std::size_t i) { return chain_cell(cfg, data, arch, cells[i]); }),
                 data);
}

ExperimentResult merge_results(ExperimentResult a, const ExperimentResult& b) {
  std::vector<RunRow> rows = std::move(a.summary.rows);
  rows.insert(rows.end(), b.summary.rows.begin(), b.summary.rows.end());
  a.summary = aggregate_runs(std::move(rows));
  a.traces.insert(a.traces.end(), b.traces.begin(), b.traces.end());
  a.confusions.insert(a.confusions.end(), b.confusions.begin(), b.confusions.end());
  if (a.class_names.empty()) a.class_names = b.class_names;
  return a;
}

ExperimentResult run_full_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
  return merge_results(run_baseline_sweep(cfg, data), run_chain_experiment(cfg, data));
}

}  // namespace tschain
