// SPDX-License-Identifier: Apache-2.0

#include "tschain/distillation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "tschain/text.hpp"

namespace tschain {

// Gatekeeper for HiddenLabels; only pseudo_label_quality uses it.
class PseudoLabelQualityAccess {
 public:
  static const std::vector<std::pair<SampleId, ClassIndex>>& entries(const HiddenLabels& h) {
    return h.entries_;
  }
};

PseudoLabel PseudoLabel::from_probabilities(SampleId id, std::vector<double> probs) {
  PseudoLabel l{id, std::move(probs), 0, 0.0};
  l.top_class = argmax(l.soft);
  l.confidence = l.soft[l.top_class];
  return l;
}

void DistillConfig::validate(std::size_t classes) const {
  if (k && *k == 0) throw std::invalid_argument("K must be positive");
  if (p && (*p == 0 || *p > classes))
    throw std::invalid_argument("P must lie in [1, " + std::to_string(classes) + "]");
}

std::vector<PseudoLabel> pseudo_label_pool(const ModelParams& model, const DataTable& pool) {
  std::vector<PseudoLabel> out;
  if (pool.empty()) return out;
  if (pool.dim() != model.arch.input_dim)
    throw std::invalid_argument("pool dimension " + std::to_string(pool.dim()) +
                                " does not match model input " +
                                std::to_string(model.arch.input_dim));
  const Matrix probs = forward(model, feature_matrix(pool));
  out.reserve(pool.size());
  for (std::size_t r = 0; r < pool.size(); ++r) {
    auto row = probs.row(r);
    out.push_back(PseudoLabel::from_probabilities(pool[r].id, {row.begin(), row.end()}));
  }
  std::stable_sort(out.begin(), out.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.sample_id < b.sample_id;
  });
  return out;
}

PseudoLabel apply_p_filter(const PseudoLabel& label, std::size_t p) {
  const std::size_t classes = label.soft.size();
  if (p == 0 || p > classes)
    throw std::invalid_argument("P must lie in [1, " + std::to_string(classes) + "]");
  if (p == classes) return label;
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return label.soft[a] > label.soft[b];
  });
  std::vector<double> kept(classes, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < p; ++i) sum += label.soft[order[i]];
  for (std::size_t i = 0; i < p; ++i) kept[order[i]] = label.soft[order[i]] / sum;
  return PseudoLabel::from_probabilities(label.sample_id, std::move(kept));
}

std::vector<PseudoLabel> apply_k_filter(std::span<const PseudoLabel> labels,
                                        std::optional<std::size_t> k,
                                        const ClassCatalog& catalog) {
  std::vector<std::vector<const PseudoLabel*>> by_class(catalog.size());
  for (const auto& l : labels) {
    if (l.top_class >= catalog.size())
      throw std::invalid_argument("pseudo-label class out of catalog range");
    by_class[l.top_class].push_back(&l);
  }
  std::vector<PseudoLabel> out;
  for (auto& group : by_class) {
    std::sort(group.begin(), group.end(), [](const PseudoLabel* a, const PseudoLabel* b) {
      if (a->confidence != b->confidence) return a->confidence > b->confidence;
      return a->sample_id < b->sample_id;
    });
    const std::size_t keep = k ? std::min(*k, group.size()) : group.size();
    for (std::size_t i = 0; i < keep; ++i) out.push_back(*group[i]);
  }
  return out;
}

std::vector<PseudoLabel> filter_pseudo_labels(std::span<const PseudoLabel> labels,
                                              const DistillConfig& config,
                                              const ClassCatalog& catalog) {
  config.validate(catalog.size());
  std::vector<PseudoLabel> shaped;
  shaped.reserve(labels.size());
  for (const auto& l : labels) shaped.push_back(config.p ? apply_p_filter(l, *config.p) : l);
  return apply_k_filter(shaped, config.k, catalog);
}

PseudoLabelQuality pseudo_label_quality(std::span<const PseudoLabel> labels,
                                        const HiddenLabels& truth) {
  const auto& entries = PseudoLabelQualityAccess::entries(truth);
  PseudoLabelQuality q;
  q.per_class_agreement.assign(truth.num_classes(), 0.0);
  q.per_class_count.assign(truth.num_classes(), 0);
  std::vector<std::size_t> hits(truth.num_classes(), 0);
  std::size_t total_hits = 0;
  for (const auto& l : labels) {
    const auto it = std::lower_bound(
        entries.begin(), entries.end(), l.sample_id,
        [](const std::pair<SampleId, ClassIndex>& e, SampleId id) { return e.first < id; });
    if (it == entries.end() || it->first != l.sample_id)
      throw std::invalid_argument("pseudo-label for unknown pool sample " +
                                  std::to_string(l.sample_id));
    ++q.per_class_count[it->second];
    if (l.top_class == it->second) {
      ++hits[it->second];
      ++total_hits;
    }
  }
  for (std::size_t c = 0; c < hits.size(); ++c)
    if (q.per_class_count[c] > 0)
      q.per_class_agreement[c] =
          static_cast<double>(hits[c]) / static_cast<double>(q.per_class_count[c]);
  if (!labels.empty())
    q.agreement = static_cast<double>(total_hits) / static_cast<double>(labels.size());
  return q;
}

void write_pseudo_labels(const std::filesystem::path& path, std::span<const PseudoLabel> labels,
                         std::size_t classes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,top_class,confidence";
  for (std::size_t c = 0; c < classes; ++c) out << ",p" << c;
  out << '\n';
  for (const auto& l : labels) {
    out << l.sample_id << ',' << l.top_class << ',' << format_double(l.confidence);
    for (double p : l.soft) out << ',' << format_double(p);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace tschain
