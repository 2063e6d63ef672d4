// SPDX-License-Identifier: Apache-2.0

#include "tschain/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tschain/rng.hpp"

namespace tschain {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr std::uint64_t kBatchStream = 0x6261746368;  // "batch"

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// z = a * W^T + b for a batch.
void affine(const DenseLayer& layer, const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, layer.fan_out);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const double* x = in.data.data() + r * in.cols;
    double* z = out.data.data() + r * out.cols;
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      const double* w = layer.weights.data() + o * layer.fan_in;
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += w[i] * x[i];
      z[o] = acc;
    }
  }
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (auto& x : row) x /= sum;
  }
}

void check_input(const ModelParams& params, const Matrix& features) {
  if (features.cols != params.arch.input_dim)
    throw std::invalid_argument("input has " + std::to_string(features.cols) +
                                " features, model expects " +
                                std::to_string(params.arch.input_dim));
  if (!all_finite(features.data)) throw std::invalid_argument("non-finite input feature");
}

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.emplace_back(l.fan_in, l.fan_out);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shapes

void ArchSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("architecture input dimension must be positive");
  if (output_dim < 2) throw std::invalid_argument("architecture needs at least 2 output classes");
  for (auto h : hidden)
    if (h == 0) throw std::invalid_argument("hidden layer widths must be positive");
}

std::vector<std::size_t> ArchSpec::widths() const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output_dim);
  return w;
}

ModelParams ModelParams::zeros(const ArchSpec& arch) {
  arch.validate();
  ModelParams p{arch, {}};
  const auto w = arch.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) p.layers.emplace_back(w[l], w[l + 1]);
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& l) {
    return tschain::all_finite(l.weights) && tschain::all_finite(l.bias);
  });
}

AdamState AdamState::fresh(const ModelParams& params) {
  return AdamState{zeros_like(params.layers), zeros_like(params.layers), 0};
}

SoftTarget::SoftTarget(std::vector<double> probabilities) : probs_(std::move(probabilities)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw std::invalid_argument("soft target entries must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("soft target does not sum to 1");
}

SoftTarget SoftTarget::one_hot(ClassIndex c, std::size_t classes) {
  if (c >= classes) throw std::invalid_argument("one-hot class out of range");
  std::vector<double> p(classes, 0.0);
  p[c] = 1.0;
  return SoftTarget(std::move(p));
}

void TrainingSet::add(std::span<const double> x, const SoftTarget& target) {
  if (x.size() != features.cols) throw std::invalid_argument("training feature dimension mismatch");
  if (target.size() != targets.cols) throw std::invalid_argument("training target class count mismatch");
  features.data.insert(features.data.end(), x.begin(), x.end());
  targets.data.insert(targets.data.end(), target.probabilities().begin(),
                      target.probabilities().end());
  ++features.rows;
  ++targets.rows;
}

TrainingSet TrainingSet::from_labels(const DataTable& table) {
  TrainingSet set(table.dim(), table.num_classes());
  for (const auto& s : table.samples()) {
    if (!s.label)
      throw std::invalid_argument("sample " + std::to_string(s.id) + " has no label");
    set.add(s.features, SoftTarget::one_hot(*s.label, table.num_classes()));
  }
  return set;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (steps_per_epoch == 0) throw std::invalid_argument("steps_per_epoch must be positive");
}

// ---------------------------------------------------------------------------
// Model maths

ModelParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(arch);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double a = 1.0 / std::sqrt(static_cast<double>(layer.fan_in));
    for (auto& w : layer.weights) w = rng.uniform(-a, a);
  }
  return p;
}

std::vector<double> softmax(std::span<const double> logits) {
  Matrix m(1, logits.size());
  std::copy(logits.begin(), logits.end(), m.data.begin());
  softmax_rows(m);
  return m.data;
}

Matrix forward_logits(const ModelParams& params, const Matrix& features) {
  check_input(params, features);
  Matrix act = features;
  Matrix z;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    affine(params.layers[l], act, z);
    if (l + 1 < params.layers.size())
      for (auto& x : z.data) x = std::max(x, 0.0);
    act = std::move(z);
  }
  return act;
}

Matrix forward(const ModelParams& params, const Matrix& features) {
  Matrix probs = forward_logits(params, features);
  softmax_rows(probs);
  return probs;
}

double soft_cross_entropy(std::span<const double> probs, std::span<const double> target) {
  if (probs.size() != target.size())
    throw std::invalid_argument("probability and target lengths differ");
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (target[c] != 0.0) loss -= target[c] * std::log(std::max(probs[c], kLogFloor));
  return loss;
}

double mean_soft_cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (probs.rows != targets.rows || probs.cols != targets.cols)
    throw std::invalid_argument("probability and target batch shapes differ");
  if (probs.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) total += soft_cross_entropy(probs.row(r), targets.row(r));
  return total / static_cast<double>(probs.rows);
}

Gradient backward(const ModelParams& params, const Matrix& features, const Matrix& targets) {
  check_input(params, features);
  if (targets.rows != features.rows || targets.cols != params.arch.output_dim)
    throw std::invalid_argument("target batch shape does not match the model");
  if (features.rows == 0) throw std::invalid_argument("empty batch");

  const std::size_t n_layers = params.layers.size();
  // activations[l] is the input to layer l; pre[l] its affine output.
  std::vector<Matrix> activations(n_layers);
  std::vector<Matrix> pre(n_layers);
  activations[0] = features;
  for (std::size_t l = 0; l < n_layers; ++l) {
    affine(params.layers[l], activations[l], pre[l]);
    if (l + 1 < n_layers) {
      activations[l + 1] = pre[l];
      for (auto& x : activations[l + 1].data) x = std::max(x, 0.0);
    }
  }
  Matrix probs = pre.back();
  softmax_rows(probs);

  Gradient grad{zeros_like(params.layers), mean_soft_cross_entropy(probs, targets)};

  const double inv_batch = 1.0 / static_cast<double>(features.rows);
  Matrix delta(probs.rows, probs.cols);
  for (std::size_t i = 0; i < delta.data.size(); ++i)
    delta.data[i] = (probs.data[i] - targets.data[i]) * inv_batch;

  for (std::size_t l = n_layers; l-- > 0;) {
    const DenseLayer& layer = params.layers[l];
    DenseLayer& g = grad.layers[l];
    const Matrix& in = activations[l];
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* d = delta.data.data() + r * delta.cols;
      const double* x = in.data.data() + r * in.cols;
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        if (d[o] == 0.0) continue;
        double* gw = g.weights.data() + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) gw[i] += d[o] * x[i];
        g.bias[o] += d[o];
      }
    }
    if (l == 0) break;
    Matrix next(delta.rows, layer.fan_in);
    const Matrix& z_prev = pre[l - 1];
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* d = delta.data.data() + r * delta.cols;
      double* nd = next.data.data() + r * next.cols;
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        if (d[o] == 0.0) continue;
        const double* w = layer.weights.data() + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) nd[i] += d[o] * w[i];
      }
      for (std::size_t i = 0; i < layer.fan_in; ++i)
        if (!(z_prev(r, i) > 0.0)) nd[i] = 0.0;
    }
    delta = std::move(next);
  }

  if (!std::isfinite(grad.loss)) throw NumericError("non-finite loss in backward pass");
  for (const auto& g : grad.layers)
    if (!all_finite(g.weights) || !all_finite(g.bias))
      throw NumericError("non-finite gradient in backward pass");
  return grad;
}

void adam_update(ModelParams& params, const Gradient& grad, AdamState& state,
                 double learning_rate) {
  if (grad.layers.size() != params.layers.size() || state.m.size() != params.layers.size() ||
      state.v.size() != params.layers.size())
    throw std::invalid_argument("gradient or optimizer state is not congruent with the model");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, t);

  const auto step = [&](std::vector<double>& theta, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v) {
    if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
      throw std::invalid_argument("gradient or optimizer state is not congruent with the model");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g[i];
      v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
      if (!std::isfinite(theta[i])) throw NumericError("non-finite parameter after Adam update");
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    step(params.layers[l].weights, grad.layers[l].weights, state.m[l].weights, state.v[l].weights);
    step(params.layers[l].bias, grad.layers[l].bias, state.m[l].bias, state.v[l].bias);
  }
}

ClassIndex argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  ClassIndex best = 0;
  for (ClassIndex c = 1; c < values.size(); ++c)
    if (values[c] > values[best]) best = c;
  return best;
}

std::vector<ClassIndex> predict(const ModelParams& params, const Matrix& features) {
  const Matrix probs = forward(params, features);
  std::vector<ClassIndex> out(probs.rows);
  for (std::size_t r = 0; r < probs.rows; ++r) out[r] = argmax(probs.row(r));
  return out;
}

Matrix feature_matrix(const DataTable& table) {
  Matrix m(table.size(), table.dim());
  for (std::size_t r = 0; r < table.size(); ++r)
    std::copy(table[r].features.begin(), table[r].features.end(), m.row(r).begin());
  return m;
}

// ---------------------------------------------------------------------------
// Training loop

TrainOutcome train_with_early_stopping(const ArchSpec& arch, const TrainingSet& train,
                                       const DataTable& early_stop, const TrainConfig& config) {
  return train_from(init_params(arch, config.seed), train, early_stop, config);
}

TrainOutcome train_from(ModelParams params, const TrainingSet& train, const DataTable& early_stop,
                        const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("training set is empty");
  if (train.features.cols != params.arch.input_dim || train.targets.cols != params.arch.output_dim)
    throw std::invalid_argument("training set shape does not match the model");
  if (early_stop.empty() || !early_stop.fully_labelled())
    throw std::invalid_argument("early-stop set must be non-empty and labelled");
  if (early_stop.dim() != params.arch.input_dim)
    throw std::invalid_argument("early-stop dimension does not match the model");

  TrainOutcome out{params, {}};
  if (config.max_epochs == 0) return out;

  const Matrix es_x = feature_matrix(early_stop);
  std::vector<ClassIndex> es_y;
  es_y.reserve(early_stop.size());
  for (const auto& s : early_stop.samples()) es_y.push_back(*s.label);

  const std::size_t n = train.size();
  const std::size_t d = train.features.cols;
  const std::size_t c = train.targets.cols;
  Rng rng(derive_seed(config.seed, kBatchStream));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  std::size_t cursor = 0;

  AdamState state = AdamState::fresh(params);
  Matrix bx(config.batch_size, d);
  Matrix by(config.batch_size, c);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        if (cursor == n) {
          rng.shuffle(std::span(order));
          cursor = 0;
        }
        const std::size_t idx = order[cursor++];
        std::copy_n(train.features.data.begin() + static_cast<std::ptrdiff_t>(idx * d), d,
                    bx.data.begin() + static_cast<std::ptrdiff_t>(b * d));
        std::copy_n(train.targets.data.begin() + static_cast<std::ptrdiff_t>(idx * c), c,
                    by.data.begin() + static_cast<std::ptrdiff_t>(b * c));
      }
      const Gradient g = backward(params, bx, by);
      loss_sum += g.loss;
      adam_update(params, g, state, config.learning_rate);
    }

    const auto preds = predict(params, es_x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == es_y[i];
    const double acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    out.history.epochs.push_back({loss_sum / static_cast<double>(config.steps_per_epoch), acc});

    if (!out.history.best_epoch || acc > out.history.best_accuracy) {
      out.history.best_epoch = epoch;
      out.history.best_accuracy = acc;
      out.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

void ConfusionMatrix::add(ClassIndex truth, ClassIndex predicted, std::size_t n) {
  if (truth >= classes_ || predicted >= classes_)
    throw std::invalid_argument("confusion matrix class out of range");
  counts_[truth * classes_ + predicted] += n;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t c = 0; c < classes_; ++c) t += at(c, c);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix confusion_from_predictions(std::span<const ClassIndex> truth,
                                           std::span<const ClassIndex> predicted,
                                           std::size_t classes) {
  if (truth.size() != predicted.size())
    throw std::invalid_argument("truth and prediction lengths differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

Evaluation evaluate(const ModelParams& params, const DataTable& table) {
  std::vector<ClassIndex> truth;
  truth.reserve(table.size());
  for (const auto& s : table.samples()) {
    if (!s.label)
      throw std::invalid_argument("cannot evaluate on unlabelled sample " + std::to_string(s.id));
    truth.push_back(*s.label);
  }
  const auto preds = predict(params, feature_matrix(table));
  Evaluation e{0.0, confusion_from_predictions(truth, preds, table.num_classes())};
  e.accuracy = e.confusion.accuracy();
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointFormat = "tschain-model/1";
}

std::string checkpoint_to_json(const ModelCheckpoint& checkpoint) {
  const auto& p = checkpoint.params;
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["seed"] = checkpoint.seed;
  j["input_dim"] = p.arch.input_dim;
  j["hidden"] = p.arch.hidden;
  j["output_dim"] = p.arch.output_dim;
  j["init_scheme"] = "uniform-fan-in";
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"fan_in", l.fan_in}, {"fan_out", l.fan_out}, {"weights", l.weights},
                      {"bias", l.bias}});
  return j.dump(1) + "\n";
}

ModelCheckpoint checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw std::invalid_argument("unsupported checkpoint format");
    ArchSpec arch{j.at("input_dim").get<std::size_t>(),
                  j.at("hidden").get<std::vector<std::size_t>>(),
                  j.at("output_dim").get<std::size_t>()};
    ModelCheckpoint ck{ModelParams::zeros(arch), j.at("seed").get<std::uint64_t>()};
    const auto& layers = j.at("layers");
    if (layers.size() != ck.params.layers.size())
      throw std::invalid_argument("checkpoint layer count does not match its architecture");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = ck.params.layers[l];
      auto weights = layers[l].at("weights").get<std::vector<double>>();
      auto bias = layers[l].at("bias").get<std::vector<double>>();
      if (layers[l].at("fan_in").get<std::size_t>() != dst.fan_in ||
          layers[l].at("fan_out").get<std::size_t>() != dst.fan_out ||
          weights.size() != dst.weights.size() || bias.size() != dst.bias.size())
        throw std::invalid_argument("checkpoint layer " + std::to_string(l) + " has wrong shape");
      dst.weights = std::move(weights);
      dst.bias = std::move(bias);
    }
    if (!ck.params.all_finite()) throw std::invalid_argument("checkpoint contains non-finite values");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(checkpoint);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace tschain
