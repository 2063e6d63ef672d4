// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "oracles.hpp"
#include "tschain/chain.hpp"
#include "tschain/config.hpp"
#include "tschain/experiment.hpp"
#include "tschain/text.hpp"

using namespace tschain;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += "; over time limit " + format_double(limit_s) + " s";
  }
  if (!o.pass) ++failures;
  std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

// Brute-force filters: full sort, exhaustive zeroing.
std::vector<double> sorted_p_filter(const std::vector<double>& soft, std::size_t p) {
  std::vector<std::size_t> order(soft.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return soft[a] != soft[b] ? soft[a] > soft[b] : a < b;
  });
  std::vector<double> out(soft.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < p; ++i) mass += soft[order[i]];
  for (std::size_t i = 0; i < p; ++i) out[order[i]] = soft[order[i]] / mass;
  return out;
}

std::vector<SampleId> sorted_k_filter(std::vector<PseudoLabel> labels, std::optional<std::size_t> k) {
  std::sort(labels.begin(), labels.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    if (a.top_class != b.top_class) return a.top_class < b.top_class;
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.sample_id < b.sample_id;
  });
  std::vector<SampleId> out;
  std::map<ClassIndex, std::size_t> taken;
  for (const auto& l : labels)
    if (!k || taken[l.top_class]++ < *k) out.push_back(l.sample_id);
  return out;
}

Outcome gradient_check() {
  std::mt19937_64 gen(20240101);
  double worst = 0.0;
  constexpr int kCases = 200;
  for (int i = 0; i < kCases; ++i) {
    const auto c = oracle::random_grad_case(gen);
    worst = std::max(worst, oracle::max_relative_error(c, backward(c.params, c.features, c.targets)));
  }
  return {worst < 1e-4, std::to_string(kCases) + " cases, max relative error " + format_double(worst)};
}

Outcome filter_equivalence() {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<std::size_t> n_d(1, 80), c_d(2, 9), k_d(1, 15);
  double worst = 0.0;
  std::size_t mismatched = 0;
  constexpr int kInstances = 1000;
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t classes = c_d(gen);
    const std::vector<PseudoLabel> labels = oracle::random_labels(gen, n_d(gen), classes, t % 2 == 0);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(1, classes)(gen);
    const std::optional<std::size_t> k =
        t % 10 == 0 ? std::nullopt : std::optional<std::size_t>(k_d(gen));

    std::vector<PseudoLabel> p_filtered;
    for (const auto& l : labels) {
      const auto got = apply_p_filter(l, p);
      const auto a = sorted_p_filter(l.soft, p);
      const auto b = oracle::p_filter(l.soft, p);
      for (std::size_t c = 0; c < classes; ++c) {
        worst = std::max({worst, std::abs(got.soft[c] - a[c]), std::abs(got.soft[c] - b[c])});
        if ((got.soft[c] == 0.0) != (a[c] == 0.0)) ++mismatched;
      }
      p_filtered.push_back(got);
    }
    const auto catalog = ClassCatalog::numbered(classes);
    const std::array<const std::vector<PseudoLabel>*, 2> sets{&labels, &p_filtered};
    for (const auto* set : sets) {
      const auto got = apply_k_filter(*set, k, catalog);
      const auto sorted = sorted_k_filter(*set, k);
      const auto counted = oracle::k_filter(*set, k);
      if (got.size() != sorted.size() || got.size() != counted.size()) {
        ++mismatched;
        continue;
      }
      for (std::size_t i = 0; i < got.size(); ++i)
        if (got[i].sample_id != sorted[i] || got[i].sample_id != counted[i].id) ++mismatched;
    }
  }
  return {worst <= 1e-12 && mismatched == 0,
          std::to_string(kInstances) + " instances, max deviation " + format_double(worst) +
              ", mismatches " + std::to_string(mismatched)};
}

template <typename T>
concept ReadableHiddenLabels = requires(const T& h) { h.entries_; };

Outcome protocol_invariants() {
  static_assert(!ReadableHiddenLabels<HiddenLabels>);
  constexpr std::uint64_t kSeeds = 100;
  std::size_t violations = 0;
  std::vector<std::string> first;
  const auto check = [&](bool ok, const std::string& what, std::uint64_t seed) {
    if (ok) return;
    if (first.size() < 3) first.push_back(what + " (seed " + std::to_string(seed) + ")");
    ++violations;
  };

  const auto full = generate_synthetic({9, 900, 16, 0.9, 1});
  ChainConfig cfg;
  cfg.iterations = 2;
  for (auto* t : {&cfg.pretrain, &cfg.finetune}) {
    t->max_epochs = 3;
    t->patience = 2;
    t->steps_per_epoch = 5;
    t->batch_size = 16;
  }
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    // Splits of the default benchmark: disjoint, covering, every class in
    // early-stop, pool labels stripped.
    const auto s = make_splits(full.train, {0.01, 0.01, seed, seed % 2 == 1});
    std::set<SampleId> seen;
    std::size_t total = 0;
    for (const auto* part : {&s.labelled, &s.early_stop, &s.pool})
      for (const auto& x : part->samples()) {
        seen.insert(x.id);
        ++total;
      }
    check(total == full.train.size() && seen.size() == total, "split disjointness/coverage", seed);
    for (auto c : s.early_stop.class_counts()) check(c >= 1, "early-stop class coverage", seed);
    bool stripped = true;
    for (const auto& x : s.pool.samples()) stripped = stripped && !x.label;
    check(stripped && s.pool_truth.size() == s.pool.size(), "pool labels hidden", seed);

    // K-filter cap and confidence dominance.
    std::mt19937_64 gen(seed);
    const auto labels = oracle::random_labels(gen, 200, 9, seed % 2 == 0);
    const std::size_t k = 1 + seed % 30;
    const auto kept = apply_k_filter(labels, k, ClassCatalog::tissue_default());
    std::map<ClassIndex, std::size_t> per_class;
    std::map<ClassIndex, double> min_kept;
    std::set<SampleId> kept_ids;
    for (const auto& l : kept) {
      ++per_class[l.top_class];
      min_kept.try_emplace(l.top_class, l.confidence);
      min_kept[l.top_class] = std::min(min_kept[l.top_class], l.confidence);
      kept_ids.insert(l.sample_id);
    }
    for (auto [c, n] : per_class) check(n <= k, "K cap", seed);
    for (const auto& l : labels)
      if (!kept_ids.count(l.sample_id))
        check(per_class[l.top_class] == k && l.confidence <= min_kept[l.top_class],
              "confidence dominance", seed);

    // Chain records and selection dominance on a small benchmark.
    const auto small = generate_synthetic({3, 40, 4, 0.6, seed});
    const auto ss = make_splits(small.train, {0.1, 0.1, seed, false});
    cfg.seed = seed;
    cfg.distill.k = 5 + seed % 10;
    const auto r = run_chain(ss, small.validation, small.test, {4, {4}, 3}, cfg);
    check(!r.failure, "chain completed", seed);
    check(r.records.size() == cfg.iterations + 1, "record count", seed);
    check(r.records[r.best_iteration].val_accuracy >= r.records[0].val_accuracy,
          "selection dominance", seed);
  }
  std::string detail = std::to_string(kSeeds) + " seeds, " + std::to_string(violations) + " violations";
  for (const auto& f : first) detail += "; " + f;
  return {violations == 0, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "tschain_acceptance";
  fs::remove_all(root);
  const auto run = [&](const std::string& name, const std::string& extra) {
    const std::string cmd = std::string(TSCHAIN_CLI_PATH) + " chain --seed 1 --out " +
                            (root / name).string() + extra + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  if (!run("a", "") || !run("b", " --jobs 2")) return {false, "CLI run failed"};
  bool same = true;
  std::string detail;
  for (const char* f : {"summary.csv", "traces.csv"}) {
    const auto a = slurp(root / "a" / f);
    const bool eq = !a.empty() && a == slurp(root / "b" / f);
    same = same && eq;
    detail += std::string(f) + (eq ? " identical (" + std::to_string(a.size()) + " bytes); " : " differs; ");
  }
  return {same, detail + "second run used --jobs 2"};
}

ExperimentConfig benchmark_config(const std::string& fractions) {
  return build_config({{"fractions", fractions}, {"runs", "5"}, {"seed", "1"}});
}

Outcome baseline_trend() {
  const auto cfg = benchmark_config("0.0025, 0.01, 0.05, 0.20");
  const auto r = run_baseline_sweep(cfg, load_experiment_data(cfg));
  std::vector<double> means;
  std::string detail = "val means";
  for (double f : cfg.fractions) {
    const auto* cell = r.summary.find(f, mode::baseline);
    if (!cell || !cell->val) return {false, "missing cell " + format_double(f)};
    means.push_back(cell->val->mean);
    detail += " " + format_fixed(cell->val->mean, 4);
  }
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < means.size(); ++i) inversions += means[i] < means[i - 1];
  return {inversions <= 1, detail + ", inversions " + std::to_string(inversions)};
}

Outcome chain_benefit() {
  const auto cfg = benchmark_config("0.01");
  const auto r = run_chain_experiment(cfg, load_experiment_data(cfg));
  const auto* teacher = r.summary.find(0.01, mode::chain_teacher);
  const auto* best = r.summary.find(0.01, mode::chain_best);
  if (!teacher || !best || !teacher->test || !best->test || best->n != 5)
    return {false, "chain cells incomplete"};
  bool dominance = true;
  std::map<std::size_t, double> teacher_val;
  for (const auto& row : r.summary.rows)
    if (row.mode == mode::chain_teacher) teacher_val[row.run] = row.val_accuracy;
  for (const auto& row : r.summary.rows)
    if (row.mode == mode::chain_best) dominance = dominance && row.val_accuracy >= teacher_val.at(row.run);
  const double gap = best->test->mean - teacher->test->mean;
  return {dominance && gap > 0.0,
          "teacher test " + format_fixed(teacher->test->mean, 4) + ", best student test " +
              format_fixed(best->test->mean, 4) + ", gap " + format_fixed(gap, 4) +
              ", per-run val dominance " + (dominance ? "holds" : "violated")};
}

Outcome k_heuristic() {
  constexpr std::size_t kClasses = 9, kPerClass = 5000;
  std::mt19937_64 gen(4000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PseudoLabel> pool;
  for (std::size_t c = 0; c < kClasses; ++c)
    for (std::size_t i = 0; i < kPerClass; ++i) {
      std::vector<double> p(kClasses);
      for (auto& x : p) x = u(gen);
      p[c] = 2.0 + u(gen);  // makes c the top class
      const double s = std::accumulate(p.begin(), p.end(), 0.0);
      for (auto& x : p) x /= s;
      pool.push_back(PseudoLabel::from_probabilities(c * kPerClass + i, std::move(p)));
    }
  const auto kept = filter_pseudo_labels(pool, {4000, std::nullopt}, ClassCatalog::tissue_default());
  const double share = static_cast<double>(kept.size()) / static_cast<double>(pool.size());
  return {kept.size() * 5 == pool.size() * 4,
          std::to_string(kept.size()) + " of " + std::to_string(pool.size()) + " kept (" +
              format_double(share) + ")"};
}

}  // namespace

int main() {
  criterion(1, "gradient check", 30, gradient_check);
  criterion(2, "filter oracle equivalence", 10, filter_equivalence);
  criterion(3, "protocol invariants", 60, protocol_invariants);
  criterion(4, "determinism of the default experiment", 0, determinism);
  criterion(5, "baseline trend over labelled fractions", 300, baseline_trend);
  criterion(6, "chain benefit at fraction 0.01", 300, chain_benefit);
  criterion(7, "K=4000 keeps 80% of a 5000-per-class pool", 0, k_heuristic);
  std::printf("%d of 7 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
