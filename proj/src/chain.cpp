// SPDX-License-Identifier: Apache-2.0

#include "tschain/chain.hpp"

#include <unordered_map>

#include "tschain/rng.hpp"
#include "tschain/text.hpp"

namespace tschain {

namespace {

constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kFinetuneStream = 2;

TrainConfig with_seed(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

IterationRecord make_record(std::size_t iteration, ModelParams model, const DataTable& validation,
                            const DataTable& test) {
  IterationRecord r;
  r.iteration = iteration;
  r.val_accuracy = evaluate(model, validation).accuracy;
  // Test results are recorded only; nothing downstream of a run reads them
  // for training or selection.
  const Evaluation t = evaluate(model, test);
  r.test_accuracy = t.accuracy;
  r.test_confusion = t.confusion;
  r.model = std::move(model);
  return r;
}

}  // namespace

void ChainConfig::validate(std::size_t classes) const {
  if (iterations == 0) throw std::invalid_argument("chain needs at least one iteration");
  distill.validate(classes);
  pretrain.validate();
  finetune.validate();
}

std::size_t select_best(std::span<const double> val_accuracies) {
  if (val_accuracies.empty()) throw std::invalid_argument("no iterations to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_accuracies.size(); ++i)
    if (val_accuracies[i] > val_accuracies[best]) best = i;
  return best;
}

std::size_t select_best(std::span<const IterationRecord> records) {
  std::vector<double> val;
  val.reserve(records.size());
  for (const auto& r : records) val.push_back(r.val_accuracy);
  return select_best(val);
}

ModelParams train_teacher(const SplitResult& splits, const ArchSpec& arch,
                          const TrainConfig& finetune, std::uint64_t seed) {
  if (splits.labelled.empty()) throw std::invalid_argument("labelled split is empty");
  return train_from(init_params(arch, seed), TrainingSet::from_labels(splits.labelled),
                    splits.early_stop, with_seed(finetune, derive_seed(seed, kFinetuneStream)))
      .params;
}

ModelParams train_student(std::span<const PseudoLabel> teacher_labels, const SplitResult& splits,
                          const ArchSpec& arch, const ChainConfig& cfg, std::uint64_t student_seed,
                          const ModelParams* warm_start) {
  if (teacher_labels.empty()) throw std::invalid_argument("pseudo-label set is empty");
  if (splits.labelled.empty()) throw std::invalid_argument("labelled split is empty");

  std::unordered_map<SampleId, std::size_t> row_of;
  row_of.reserve(splits.pool.size());
  for (std::size_t r = 0; r < splits.pool.size(); ++r) row_of.emplace(splits.pool[r].id, r);

  TrainingSet pseudo(splits.pool.dim(), splits.pool.num_classes());
  for (const auto& l : teacher_labels) {
    const auto it = row_of.find(l.sample_id);
    if (it == row_of.end())
      throw std::invalid_argument("pseudo-label for sample " + std::to_string(l.sample_id) +
                                  " which is not in the pool");
    pseudo.add(splits.pool[it->second].features, SoftTarget(l.soft));
  }

  ModelParams params = (!cfg.fresh_init_per_student && warm_start) ? *warm_start
                                                                   : init_params(arch, student_seed);
  if (cfg.pretrain.max_epochs > 0)
    params = train_from(std::move(params), pseudo, splits.early_stop,
                        with_seed(cfg.pretrain, derive_seed(student_seed, kPretrainStream)))
                 .params;
  return train_from(std::move(params), TrainingSet::from_labels(splits.labelled), splits.early_stop,
                    with_seed(cfg.finetune, derive_seed(student_seed, kFinetuneStream)))
      .params;
}

ChainResult run_chain(const SplitResult& splits, const DataTable& validation,
                      const DataTable& test, const ArchSpec& arch, const ChainConfig& cfg,
                      const PseudoLabelObserver& observer) {
  cfg.validate(splits.labelled.num_classes());
  arch.validate();
  if (validation.empty() || !validation.fully_labelled())
    throw std::invalid_argument("validation table must be non-empty and labelled");
  if (test.empty() || !test.fully_labelled())
    throw std::invalid_argument("test table must be non-empty and labelled");
  if (splits.pool.empty()) throw std::invalid_argument("empty pool");

  ChainResult result;
  result.config = cfg;
  const ClassCatalog& catalog = splits.labelled.catalog();
  try {
    result.seeds.push_back(cfg.iteration_seed(0));
    ModelParams current = train_teacher(splits, arch, cfg.finetune, cfg.iteration_seed(0));
    result.records.push_back(make_record(0, current, validation, test));

    for (std::size_t i = 1; i <= cfg.iterations; ++i) {
      const auto labels = pseudo_label_pool(current, splits.pool);
      const auto filtered = filter_pseudo_labels(labels, cfg.distill, catalog);
      const double agreement = pseudo_label_quality(filtered, splits.pool_truth).agreement;
      if (observer) observer(i, filtered);

      result.seeds.push_back(cfg.iteration_seed(i));
      current = train_student(filtered, splits, arch, cfg, cfg.iteration_seed(i), &current);
      IterationRecord rec = make_record(i, current, validation, test);
      rec.pseudo_count = filtered.size();
      rec.pseudo_agreement = agreement;
      result.records.push_back(std::move(rec));
    }
  } catch (const std::exception& e) {
    result.failure = e.what();
  }
  if (!result.records.empty()) result.best_iteration = select_best(result.records);
  return result;
}

void write_chain_trace(std::ostream& out,
                       std::span<const std::pair<std::size_t, ChainResult>> runs) {
  out << "run,iteration,val_accuracy,test_accuracy,pseudo_count,pseudo_agreement\n";
  for (const auto& [run, chain] : runs)
    for (const auto& r : chain.records) {
      out << run << ',' << r.iteration << ',' << format_double(r.val_accuracy) << ','
          << format_double(r.test_accuracy) << ',' << r.pseudo_count << ',';
      if (r.pseudo_agreement) out << format_double(*r.pseudo_agreement);
      out << '\n';
    }
}

}  // namespace tschain
