// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "tschain/distillation.hpp"

using namespace tschain;

namespace {

PseudoLabel label(SampleId id, std::vector<double> p) {
  return PseudoLabel::from_probabilities(id, std::move(p));
}

// Pool labels of a table whose rows are (id, class).
HiddenLabels truth_of(std::size_t classes, std::vector<std::pair<SampleId, ClassIndex>> rows) {
  std::vector<Sample> s;
  for (auto [id, c] : rows) s.push_back({id, {0.0}, c});
  return HiddenLabels(DataTable(ClassCatalog::numbered(classes), 1, std::move(s)));
}

}  // namespace

TEST(PseudoLabel, TopClassAndConfidence) {
  const auto l = label(3, {0.2, 0.5, 0.3});
  EXPECT_EQ(l.top_class, 1u);
  EXPECT_EQ(l.confidence, 0.5);
  EXPECT_EQ(label(1, {0.4, 0.4, 0.2}).top_class, 0u);
}

TEST(PseudoLabelPool, OneLabelPerSampleSortedById) {
  auto p = ModelParams::zeros({1, {}, 3});
  p.layers[0].weights = {1.0, 0.0, -1.0};
  DataTable pool(ClassCatalog::numbered(3), 1,
                 {{9, {2.0}, std::nullopt}, {4, {-2.0}, std::nullopt}, {6, {0.0}, std::nullopt}});
  const auto labels = pseudo_label_pool(p, pool);
  ASSERT_EQ(labels.size(), 3u);
  EXPECT_EQ(labels[0].sample_id, 4u);
  EXPECT_EQ(labels[0].top_class, 2u);
  EXPECT_EQ(labels[1].sample_id, 6u);
  EXPECT_EQ(labels[1].top_class, 0u);  // uniform row, lowest index
  EXPECT_EQ(labels[2].sample_id, 9u);
  EXPECT_EQ(labels[2].top_class, 0u);
  for (const auto& l : labels) {
    double s = 0.0;
    for (double x : l.soft) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_TRUE(pseudo_label_pool(p, DataTable(ClassCatalog::numbered(3), 1)).empty());
}

TEST(PFilter, TopTwoRenormalized) {
  const auto out = apply_p_filter(label(1, {0.5, 0.3, 0.15, 0.05}), 2);
  EXPECT_NEAR(out.soft[0], 0.625, 1e-15);
  EXPECT_NEAR(out.soft[1], 0.375, 1e-15);
  EXPECT_EQ(out.soft[2], 0.0);
  EXPECT_EQ(out.soft[3], 0.0);
  EXPECT_EQ(out.top_class, 0u);
  EXPECT_EQ(out.sample_id, 1u);
}

TEST(PFilter, OneIsOneHotAndAllIsIdentity) {
  const auto in = label(2, {0.1, 0.6, 0.3});
  EXPECT_EQ(apply_p_filter(in, 1).soft, (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_EQ(apply_p_filter(in, 3), in);
  EXPECT_THROW(apply_p_filter(in, 0), std::invalid_argument);
  EXPECT_THROW(apply_p_filter(in, 4), std::invalid_argument);
}

TEST(PFilter, TieAtCutKeepsLowerIndex) {
  const auto out = apply_p_filter(label(1, {0.2, 0.4, 0.4}), 1);
  EXPECT_EQ(out.soft, (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(PFilter, AgreesWithExhaustiveOracle) {
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t classes = 2 + trial % 8;
    for (const auto& l : oracle::random_labels(gen, 3, classes, trial % 2 == 0)) {
      for (std::size_t p = 1; p <= classes; ++p) {
        const auto got = apply_p_filter(l, p);
        const auto want = oracle::p_filter(l.soft, p);
        std::size_t nonzero = 0;
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
          EXPECT_NEAR(got.soft[c], want[c], 1e-12);
          nonzero += got.soft[c] > 0.0;
          sum += got.soft[c];
        }
        EXPECT_EQ(nonzero, p);
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(got.top_class, l.top_class);
      }
    }
  }
}

TEST(KFilter, KeepsMostConfidentPerClass) {
  const std::vector<PseudoLabel> in{label(1, {0.9, 0.1}), label(2, {0.6, 0.4}),
                                    label(3, {0.2, 0.8}), label(4, {0.3, 0.7}),
                                    label(5, {0.45, 0.55})};
  const auto out = apply_k_filter(in, 1, ClassCatalog::numbered(2));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].sample_id, 1u);
  EXPECT_EQ(out[1].sample_id, 3u);
}

TEST(KFilter, ConfidenceTiesBrokenById) {
  const std::vector<PseudoLabel> in{label(8, {0.7, 0.3}), label(2, {0.7, 0.3}),
                                    label(5, {0.7, 0.3})};
  const auto out = apply_k_filter(in, 2, ClassCatalog::numbered(2));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].sample_id, 2u);
  EXPECT_EQ(out[1].sample_id, 5u);
}

TEST(KFilter, SmallClassesKeepEverythingAndInfinityKeepsAll) {
  std::mt19937_64 gen(3);
  const auto in = oracle::random_labels(gen, 50, 4, false);
  EXPECT_EQ(apply_k_filter(in, std::nullopt, ClassCatalog::numbered(4)).size(), 50u);
  EXPECT_EQ(apply_k_filter(in, 1000, ClassCatalog::numbered(4)).size(), 50u);
  EXPECT_TRUE(apply_k_filter({}, 5, ClassCatalog::numbered(4)).empty());
}

TEST(KFilter, FourThousandOfFiveThousandPerClass) {
  std::vector<PseudoLabel> in;
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < 9; ++c)
    for (std::size_t i = 0; i < 5000; ++i) {
      std::vector<double> p(9, 0.0);
      p[c] = 0.5 + 0.5 * u(gen);
      const double rest = (1.0 - p[c]) / 8.0;
      for (std::size_t o = 0; o < 9; ++o)
        if (o != c) p[o] = rest;
      in.push_back(label(c * 5000 + i, std::move(p)));
    }
  const auto out = apply_k_filter(in, 4000, ClassCatalog::tissue_default());
  EXPECT_EQ(out.size(), 36000u);
  std::vector<std::size_t> counts(9, 0);
  for (const auto& l : out) ++counts[l.top_class];
  for (auto n : counts) EXPECT_EQ(n, 4000u);
}

TEST(KFilter, AgreesWithCountingOracle) {
  std::mt19937_64 gen(99);
  std::uniform_int_distribution<std::size_t> n_d(0, 60), k_d(0, 12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t classes = 2 + trial % 5;
    const auto in = oracle::random_labels(gen, n_d(gen), classes, trial % 2 == 0);
    const std::optional<std::size_t> k =
        trial % 7 == 0 ? std::nullopt : std::optional<std::size_t>(k_d(gen));
    const auto got = apply_k_filter(in, k, ClassCatalog::numbered(classes));
    const auto want = oracle::k_filter(in, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].sample_id, want[i].id);
      EXPECT_EQ(got[i].top_class, want[i].top_class);
    }
  }
}

TEST(Filters, PFilterRunsBeforeKFilter) {
  // Renormalizing after the P-filter changes confidences, so the K-filter
  // must rank the P-filtered labels.
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = oracle::random_labels(gen, 40, 5, trial % 2 == 0);
    const auto out = filter_pseudo_labels(in, {3, 2}, ClassCatalog::numbered(5));
    std::vector<PseudoLabel> p_filtered;
    for (const auto& l : in) {
      auto soft = oracle::p_filter(l.soft, 2);
      p_filtered.push_back(PseudoLabel::from_probabilities(l.sample_id, std::move(soft)));
    }
    const auto want = oracle::k_filter(p_filtered, 3);
    ASSERT_EQ(out.size(), want.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(out[i].sample_id, want[i].id);
      std::size_t nonzero = 0;
      for (double x : out[i].soft) nonzero += x > 0.0;
      EXPECT_EQ(nonzero, 2u);
    }
  }
}

TEST(DistillConfig, Validation) {
  EXPECT_NO_THROW((DistillConfig{4000, std::nullopt}.validate(9)));
  EXPECT_NO_THROW((DistillConfig{std::nullopt, 9}.validate(9)));
  EXPECT_THROW((DistillConfig{0, std::nullopt}.validate(9)), std::invalid_argument);
  EXPECT_THROW((DistillConfig{5, 0}.validate(9)), std::invalid_argument);
  EXPECT_THROW((DistillConfig{5, 10}.validate(9)), std::invalid_argument);
}

TEST(Quality, PerfectAndPartialAgreement) {
  const auto truth = truth_of(3, {{1, 0}, {2, 1}, {3, 2}});
  const std::vector<PseudoLabel> perfect{label(1, {1, 0, 0}), label(2, {0, 1, 0}), label(3, {0, 0, 1})};
  EXPECT_EQ(pseudo_label_quality(perfect, truth).agreement, 1.0);

  const std::vector<PseudoLabel> partial{label(1, {1, 0, 0}), label(2, {0, 1, 0}), label(3, {1, 0, 0})};
  const auto q = pseudo_label_quality(partial, truth);
  EXPECT_NEAR(q.agreement, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(q.per_class_count, (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_EQ(q.per_class_agreement, (std::vector<double>{1.0, 1.0, 0.0}));
}

TEST(Quality, PerClassRecombinesToOverall) {
  std::mt19937_64 gen(12);
  std::uniform_int_distribution<ClassIndex> cls(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto labels = oracle::random_labels(gen, 80, 4, trial % 2 == 0);
    std::vector<std::pair<SampleId, ClassIndex>> rows;
    for (const auto& l : labels) rows.push_back({l.sample_id, cls(gen)});
    const auto q = pseudo_label_quality(labels, truth_of(4, rows));
    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      weighted += q.per_class_agreement[c] * static_cast<double>(q.per_class_count[c]);
      total += q.per_class_count[c];
    }
    EXPECT_EQ(total, labels.size());
    EXPECT_NEAR(weighted / static_cast<double>(total), q.agreement, 1e-12);
  }
}

TEST(Quality, UnknownSampleRejected) {
  const auto truth = truth_of(2, {{1, 0}});
  const std::vector<PseudoLabel> labels{label(2, {1, 0})};
  EXPECT_THROW(pseudo_label_quality(labels, truth), std::invalid_argument);
}

TEST(PseudoLabelFile, HeaderAndRows) {
  const auto path = std::filesystem::temp_directory_path() / "tschain_pl.csv";
  const std::vector<PseudoLabel> labels{label(5, {0.25, 0.75})};
  write_pseudo_labels(path, labels, 2);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "sample_id,top_class,confidence,p0,p1");
  EXPECT_EQ(row, "5,1,0.75,0.25,0.75");
}
