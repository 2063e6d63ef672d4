// SPDX-License-Identifier: Apache-2.0
//
// Pseudo-labelling of the unlabelled pool and the two pseudo-label filters:
// the P-filter (keep the top P class probabilities of each label) and the
// K-filter (keep the K most confident pool samples of each predicted class).

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tschain/dataset.hpp"
#include "tschain/learner.hpp"

namespace tschain {

struct PseudoLabel {
  SampleId sample_id = 0;
  std::vector<double> soft;
  ClassIndex top_class = 0;
  double confidence = 0.0;

  /// Builds a label from a probability vector; top_class uses the lowest
  /// index on ties.
  static PseudoLabel from_probabilities(SampleId id, std::vector<double> probs);

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct DistillConfig {
  /// Samples kept per predicted class; nullopt keeps all.
  std::optional<std::size_t> k = 4000;
  /// Non-zero probabilities kept per label; nullopt keeps all classes.
  std::optional<std::size_t> p;

  void validate(std::size_t classes) const;
};

/// One label per pool sample, ordered by ascending sample id.
std::vector<PseudoLabel> pseudo_label_pool(const ModelParams& model, const DataTable& pool);

/// Zeroes all but the P largest probabilities (lower class index wins ties at
/// the cut) and renormalizes the survivors.
PseudoLabel apply_p_filter(const PseudoLabel& label, std::size_t p);

/// Keeps, for each predicted class, the min(K, n) labels with the highest
/// confidence (ties: ascending sample id). Output is grouped by class in
/// catalog order, each group in rank order.
std::vector<PseudoLabel> apply_k_filter(std::span<const PseudoLabel> labels,
                                        std::optional<std::size_t> k,
                                        const ClassCatalog& catalog);

/// P-filter on every label, then the K-filter.
std::vector<PseudoLabel> filter_pseudo_labels(std::span<const PseudoLabel> labels,
                                              const DistillConfig& config,
                                              const ClassCatalog& catalog);

struct PseudoLabelQuality {
  /// Fraction of labels whose top_class equals the hidden true class.
  double agreement = 0.0;
  /// Per true class: fraction of that class's labels predicted correctly
  /// (0 when the class has no labels).
  std::vector<double> per_class_agreement;
  /// Per true class: number of labels.
  std::vector<std::size_t> per_class_count;
};

/// Diagnostic only. This is the single place hidden pool labels are read.
PseudoLabelQuality pseudo_label_quality(std::span<const PseudoLabel> labels,
                                        const HiddenLabels& truth);

/// `sample_id,top_class,confidence,p0..p{C-1}`
void write_pseudo_labels(const std::filesystem::path& path, std::span<const PseudoLabel> labels,
                         std::size_t classes);

}  // namespace tschain
