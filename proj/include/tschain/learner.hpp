// SPDX-License-Identifier: Apache-2.0
//
// Feed-forward softmax classifier trained with Adam on soft-target cross
// entropy, early stopping on held-out accuracy, and evaluation helpers.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tschain/dataset.hpp"

namespace tschain {

/// Non-finite values produced during training or inference.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Hidden layers use a rectifier; an empty `hidden` list is plain softmax
/// regression.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;

  void validate() const;
  /// input_dim, hidden..., output_dim
  std::vector<std::size_t> widths() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct DenseLayer {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::vector<double> weights;  // fan_out x fan_in, row-major
  std::vector<double> bias;     // fan_out

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out)
      : fan_in(in), fan_out(out), weights(in * out, 0.0), bias(out, 0.0) {}

  double& w(std::size_t o, std::size_t i) { return weights[o * fan_in + i]; }
  double w(std::size_t o, std::size_t i) const { return weights[o * fan_in + i]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
  ArchSpec arch;
  std::vector<DenseLayer> layers;

  /// All-zero parameters with the shapes of `arch`.
  static ModelParams zeros(const ArchSpec& arch);
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gradient of the mean loss, congruent to ModelParams::layers.
struct Gradient {
  std::vector<DenseLayer> layers;
  double loss = 0.0;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<DenseLayer> m;
  std::vector<DenseLayer> v;
  std::uint64_t t = 0;

  static AdamState fresh(const ModelParams& params);
};

/// Probability vector over classes. Entries >= 0 and sum to 1 within 1e-9.
class SoftTarget {
 public:
  explicit SoftTarget(std::vector<double> probabilities);
  static SoftTarget one_hot(ClassIndex c, std::size_t classes);

  std::span<const double> probabilities() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }

 private:
  std::vector<double> probs_;
};

/// Features paired with soft targets, stored as two aligned matrices.
struct TrainingSet {
  Matrix features;
  Matrix targets;

  TrainingSet(std::size_t dim, std::size_t classes) : features(0, dim), targets(0, classes) {}

  std::size_t size() const noexcept { return features.rows; }
  bool empty() const noexcept { return features.rows == 0; }
  void add(std::span<const double> x, const SoftTarget& target);

  /// One-hot targets from a fully labelled table.
  static TrainingSet from_labels(const DataTable& table);
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t steps_per_epoch = 100;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  double mean_loss = 0.0;
  double early_stop_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  /// Earliest epoch attaining best_accuracy; empty when no epoch ran.
  std::optional<std::size_t> best_epoch;
  double best_accuracy = 0.0;
  std::string init_scheme = "uniform-fan-in";
};

struct TrainOutcome {
  ModelParams params;
  TrainHistory history;
};

/// Weights ~ U(-a, a) with a = 1/sqrt(fan_in); biases zero.
ModelParams init_params(const ArchSpec& arch, std::uint64_t seed);

/// Numerically stable softmax (row max subtracted before exponentiation).
std::vector<double> softmax(std::span<const double> logits);

/// Pre-softmax outputs, one row per input row.
Matrix forward_logits(const ModelParams& params, const Matrix& features);
/// Class probabilities, one row per input row.
Matrix forward(const ModelParams& params, const Matrix& features);

/// -sum_c target_c * ln(max(probs_c, 1e-12)).
double soft_cross_entropy(std::span<const double> probs, std::span<const double> target);
/// Mean of soft_cross_entropy over rows.
double mean_soft_cross_entropy(const Matrix& probs, const Matrix& targets);

/// Exact gradient of the mean soft cross entropy over the batch.
Gradient backward(const ModelParams& params, const Matrix& features, const Matrix& targets);

/// One bias-corrected Adam step; updates `params` and `state` in place.
void adam_update(ModelParams& params, const Gradient& grad, AdamState& state,
                 double learning_rate);

/// argmax with ties going to the lowest index.
ClassIndex argmax(std::span<const double> values);

std::vector<ClassIndex> predict(const ModelParams& params, const Matrix& features);

/// Samples of `table` as a feature matrix in table order.
Matrix feature_matrix(const DataTable& table);

/// Fresh model from init_params(arch, config.seed), then trained.
TrainOutcome train_with_early_stopping(const ArchSpec& arch, const TrainingSet& train,
                                       const DataTable& early_stop, const TrainConfig& config);

/// Same loop starting from `initial` with a fresh optimizer state.
TrainOutcome train_from(ModelParams initial, const TrainingSet& train,
                        const DataTable& early_stop, const TrainConfig& config);

/// counts(i, j) = number of samples with true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  void add(ClassIndex truth, ClassIndex predicted, std::size_t n = 1);
  std::size_t at(ClassIndex truth, ClassIndex predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t total() const;
  std::size_t trace() const;
  /// trace / total; 0 for an empty matrix.
  double accuracy() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct Evaluation {
  double accuracy = 0.0;
  ConfusionMatrix confusion{2};
};

ConfusionMatrix confusion_from_predictions(std::span<const ClassIndex> truth,
                                           std::span<const ClassIndex> predicted,
                                           std::size_t classes);

/// Hard-label accuracy and confusion matrix; every sample must be labelled.
Evaluation evaluate(const ModelParams& params, const DataTable& table);

// Checkpoints -----------------------------------------------------------------

struct ModelCheckpoint {
  ModelParams params;
  std::uint64_t seed = 0;
};

std::string checkpoint_to_json(const ModelCheckpoint& checkpoint);
ModelCheckpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tschain
