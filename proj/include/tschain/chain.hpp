// SPDX-License-Identifier: Apache-2.0
//
// Teacher-student chain: a teacher trained on the labelled split labels the
// pool, a fresh student is pretrained on the filtered soft labels and then
// fine-tuned on the labelled split, and the fine-tuned student becomes the
// next teacher.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tschain/dataset.hpp"
#include "tschain/distillation.hpp"
#include "tschain/learner.hpp"

namespace tschain {

struct ChainConfig {
  std::size_t iterations = 5;
  DistillConfig distill;
  TrainConfig pretrain;
  TrainConfig finetune;
  bool fresh_init_per_student = true;
  std::uint64_t seed = 0;

  void validate(std::size_t classes) const;
  /// Seed for iteration i (0 is the teacher).
  std::uint64_t iteration_seed(std::size_t i) const { return seed + i; }
};

struct IterationRecord {
  std::size_t iteration = 0;  // 0 is the teacher
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t pseudo_count = 0;
  /// Agreement of the filtered pseudo-labels with the hidden pool labels;
  /// empty for the teacher.
  std::optional<double> pseudo_agreement;
  ConfusionMatrix test_confusion{2};
  ModelParams model;
};

struct ChainResult {
  std::vector<IterationRecord> records;
  std::size_t best_iteration = 0;
  ChainConfig config;
  std::vector<std::uint64_t> seeds;
  /// Set when a training step failed; records hold the completed iterations.
  std::optional<std::string> failure;
};

/// Index of the largest validation accuracy, smallest index on ties.
std::size_t select_best(std::span<const double> val_accuracies);
/// Same rule over records; only validation accuracy is consulted.
std::size_t select_best(std::span<const IterationRecord> records);

/// Teacher of the chain: init from `seed`, trained on the one-hot labelled
/// split with `finetune` settings.
ModelParams train_teacher(const SplitResult& splits, const ArchSpec& arch,
                          const TrainConfig& finetune, std::uint64_t seed);

/// Pretrain on (pool features, soft pseudo-labels), reset the optimizer, then
/// fine-tune on the one-hot labelled split. Both phases early-stop on the
/// split's early-stop set. `warm_start` is used only when the config does not
/// ask for a fresh init per student.
ModelParams train_student(std::span<const PseudoLabel> teacher_labels, const SplitResult& splits,
                          const ArchSpec& arch, const ChainConfig& cfg, std::uint64_t student_seed,
                          const ModelParams* warm_start = nullptr);

/// Called with each iteration's filtered pseudo-labels before the student
/// is trained on them.
using PseudoLabelObserver =
    std::function<void(std::size_t iteration, std::span<const PseudoLabel> filtered)>;

ChainResult run_chain(const SplitResult& splits, const DataTable& validation,
                      const DataTable& test, const ArchSpec& arch, const ChainConfig& cfg,
                      const PseudoLabelObserver& observer = {});

/// `run,iteration,val_accuracy,test_accuracy,pseudo_count,pseudo_agreement`
void write_chain_trace(std::ostream& out, std::span<const std::pair<std::size_t, ChainResult>> runs);

}  // namespace tschain
