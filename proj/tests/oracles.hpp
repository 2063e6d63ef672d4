// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations. None of these call into the code
// paths they are used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tschain/distillation.hpp"
#include "tschain/learner.hpp"

namespace tschain::oracle {

/// Mean soft cross entropy computed naively in long double.
inline long double loss(const ModelParams& p, const Matrix& x, const Matrix& t) {
  long double total = 0.0L;
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::vector<long double> act(x.row(r).begin(), x.row(r).end());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& layer = p.layers[l];
      std::vector<long double> z(layer.fan_out);
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        long double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.fan_in; ++i) acc += (long double)layer.w(o, i) * act[i];
        z[o] = (l + 1 < p.layers.size()) ? std::max(acc, 0.0L) : acc;
      }
      act = std::move(z);
    }
    long double mx = act[0];
    for (auto v : act) mx = std::max(mx, v);
    long double sum = 0.0L;
    for (auto v : act) sum += std::exp(v - mx);
    for (std::size_t c = 0; c < act.size(); ++c) {
      const long double logp = (act[c] - mx) - std::log(sum);
      total -= (long double)t(r, c) * logp;
    }
  }
  return total / (long double)x.rows;
}

/// Smallest |pre-activation| over all hidden units; kinks of the rectifier
/// make finite differences meaningless when this is tiny.
inline double min_hidden_margin(const ModelParams& p, const Matrix& x) {
  double margin = INFINITY;
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::vector<double> act(x.row(r).begin(), x.row(r).end());
    for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
      const auto& layer = p.layers[l];
      std::vector<double> z(layer.fan_out);
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.fan_in; ++i) acc += layer.w(o, i) * act[i];
        margin = std::min(margin, std::abs(acc));
        z[o] = std::max(acc, 0.0);
      }
      act = std::move(z);
    }
  }
  return margin;
}

struct GradCase {
  ModelParams params;
  Matrix features;
  Matrix targets;
};

/// Random architecture, parameters, inputs and soft targets.
inline GradCase random_grad_case(std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> in_d(1, 5), depth(0, 2), width(1, 6), out_d(2, 5),
      batch(1, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  for (;;) {
    ArchSpec arch{in_d(gen), {}, out_d(gen)};
    const std::size_t layers = depth(gen);
    for (std::size_t l = 0; l < layers; ++l) arch.hidden.push_back(width(gen));
    GradCase c{ModelParams::zeros(arch), Matrix(batch(gen), arch.input_dim),
               Matrix(0, arch.output_dim)};
    for (auto& layer : c.params.layers) {
      for (auto& w : layer.weights) w = u(gen);
      for (auto& b : layer.bias) b = 0.5 * u(gen);
    }
    for (auto& x : c.features.data) x = 2.0 * u(gen);
    c.targets = Matrix(c.features.rows, arch.output_dim);
    for (std::size_t r = 0; r < c.targets.rows; ++r) {
      double s = 0.0;
      const bool hard = pos(gen) < 0.25;
      const std::size_t hot = std::uniform_int_distribution<std::size_t>(0, arch.output_dim - 1)(gen);
      for (std::size_t k = 0; k < arch.output_dim; ++k) {
        c.targets(r, k) = hard ? (k == hot ? 1.0 : 0.0) : pos(gen);
        s += c.targets(r, k);
      }
      for (std::size_t k = 0; k < arch.output_dim; ++k) c.targets(r, k) /= s;
    }
    if (min_hidden_margin(c.params, c.features) > 1e-3) return c;
  }
}

/// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// with central differences of step h.
inline double max_relative_error(const GradCase& c, const Gradient& g, double h = 1e-5) {
  double worst = 0.0;
  ModelParams p = c.params;
  const auto check = [&](double& theta, double analytic) {
    const double saved = theta;
    theta = saved + h;
    const long double up = loss(p, c.features, c.targets);
    theta = saved - h;
    const long double down = loss(p, c.features, c.targets);
    theta = saved;
    const double numeric = static_cast<double>((up - down) / (2.0L * h));
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (std::size_t i = 0; i < p.layers[l].weights.size(); ++i)
      check(p.layers[l].weights[i], g.layers[l].weights[i]);
    for (std::size_t i = 0; i < p.layers[l].bias.size(); ++i)
      check(p.layers[l].bias[i], g.layers[l].bias[i]);
  }
  return worst;
}

/// P-filter by exhaustive comparison: class c survives when fewer than P
/// classes beat it (higher probability, or equal probability and lower
/// index).
inline std::vector<double> p_filter(const std::vector<double>& soft, std::size_t p) {
  std::vector<bool> keep(soft.size());
  for (std::size_t c = 0; c < soft.size(); ++c) {
    std::size_t beaten_by = 0;
    for (std::size_t o = 0; o < soft.size(); ++o)
      if (soft[o] > soft[c] || (soft[o] == soft[c] && o < c)) ++beaten_by;
    keep[c] = beaten_by < p;
  }
  double kept_mass = 0.0;
  for (std::size_t c = 0; c < soft.size(); ++c)
    if (keep[c]) kept_mass += soft[c];
  std::vector<double> out(soft.size(), 0.0);
  for (std::size_t c = 0; c < soft.size(); ++c)
    if (keep[c]) out[c] = soft[c] / kept_mass;
  return out;
}

/// K-filter by counting, for every label, how many same-class labels rank
/// ahead of it. Returns (class, rank, sample_id) of survivors in output
/// order.
struct KeptEntry {
  std::size_t top_class;
  std::size_t rank;
  SampleId id;
  bool operator==(const KeptEntry&) const = default;
};

inline std::vector<KeptEntry> k_filter(const std::vector<PseudoLabel>& labels,
                                       std::optional<std::size_t> k) {
  std::vector<KeptEntry> kept;
  for (const auto& a : labels) {
    std::size_t ahead = 0;
    for (const auto& b : labels)
      if (b.top_class == a.top_class &&
          (b.confidence > a.confidence ||
           (b.confidence == a.confidence && b.sample_id < a.sample_id)))
        ++ahead;
    if (!k || ahead < *k) kept.push_back({a.top_class, ahead, a.sample_id});
  }
  // Output order: class ascending, then rank. Selection sort keeps this
  // independent of std::sort.
  for (std::size_t i = 0; i < kept.size(); ++i) {
    std::size_t m = i;
    for (std::size_t j = i + 1; j < kept.size(); ++j)
      if (kept[j].top_class < kept[m].top_class ||
          (kept[j].top_class == kept[m].top_class && kept[j].rank < kept[m].rank))
        m = j;
    std::swap(kept[i], kept[m]);
  }
  return kept;
}

/// Random pseudo-label set. Coarse probability grids make exact ties common.
inline std::vector<PseudoLabel> random_labels(std::mt19937_64& gen, std::size_t n,
                                              std::size_t classes, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 4);
  std::vector<SampleId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i * 3 + 1;
  std::shuffle(ids.begin(), ids.end(), gen);
  std::vector<PseudoLabel> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> soft(classes);
    double s = 0.0;
    for (auto& x : soft) {
      x = coarse ? grid(gen) + 1.0 : u(gen) + 1e-3;
      s += x;
    }
    for (auto& x : soft) x /= s;
    out.push_back(PseudoLabel::from_probabilities(ids[i], std::move(soft)));
  }
  return out;
}

}  // namespace tschain::oracle
