// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "avood/metrics.hpp"
#include "avood/rng.hpp"
#include "reference_results.hpp"

namespace avood::metrics {
namespace {

// Probability that a random seen sample outscores a random unseen one, ties counted half.
double concordance(const std::vector<double>& scores, const std::vector<bool>& is_seen) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_seen[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (is_seen[j]) continue;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      ++pairs;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> is_seen;
};

// Coarse integer-valued scores so that ties are frequent.
ScoreSet random_scores(Rng& rng, std::size_t max_size = 200) {
  ScoreSet s;
  const std::size_t n = 2 + rng.index(max_size - 1);
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(static_cast<double>(rng.index(12)) - 5.0);
    s.is_seen.push_back(rng.uniform() < 0.5);
  }
  s.is_seen[0] = true;
  s.is_seen[1] = false;
  return s;
}

TEST(MeanClassAccuracy, AllCorrect) {
  const std::vector<ClassId> y{3, 1, 3, 2};
  EXPECT_DOUBLE_EQ(mean_class_accuracy(y, y, {1, 2, 3}), 1.0);
}

TEST(MeanClassAccuracy, AveragesOverClasses) {
  const std::vector<ClassId> truth{0, 0, 1, 1, 1};
  const std::vector<ClassId> pred{0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(mean_class_accuracy(pred, truth, {0, 1}), 0.5);
}

TEST(MeanClassAccuracy, SingleClassCount) {
  const std::vector<ClassId> truth{4, 4, 4, 4};
  const std::vector<ClassId> pred{4, 1, 2, 3};
  EXPECT_DOUBLE_EQ(mean_class_accuracy(pred, truth, {4}), 0.25);
}

TEST(MeanClassAccuracy, AbsentClassesLeftOut) {
  const std::vector<ClassId> truth{0, 0};
  const std::vector<ClassId> pred{0, 1};
  EXPECT_DOUBLE_EQ(mean_class_accuracy(pred, truth, {0, 1, 2}), 0.5);
}

TEST(MeanClassAccuracy, Errors) {
  const std::vector<ClassId> empty;
  EXPECT_THROW(mean_class_accuracy(empty, empty, {0}), ValidationError);
  const std::vector<ClassId> y{5};
  EXPECT_THROW(mean_class_accuracy(y, y, {0, 1}), ValidationError);
  const std::vector<ClassId> two{0, 0};
  EXPECT_THROW(mean_class_accuracy(y, two, {0}), ValidationError);
}

TEST(MeanClassAccuracyProperty, InvariantUnderRelabeling) {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(6));
    const std::size_t n = 1 + rng.index(40);
    std::vector<ClassId> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<ClassId>(rng.index(k));
      pred[i] = static_cast<ClassId>(rng.index(k));
    }
    std::vector<ClassId> perm(k);
    for (int c = 0; c < k; ++c) perm[c] = 100 + c;
    rng.shuffle(std::span<ClassId>(perm));
    std::set<ClassId> classes, mapped_classes;
    for (int c = 0; c < k; ++c) classes.insert(c), mapped_classes.insert(perm[c]);
    std::vector<ClassId> truth2(n), pred2(n);
    for (std::size_t i = 0; i < n; ++i) truth2[i] = perm[truth[i]], pred2[i] = perm[pred[i]];
    EXPECT_DOUBLE_EQ(mean_class_accuracy(pred, truth, classes), mean_class_accuracy(pred2, truth2, mapped_classes));
  }
}

TEST(HarmonicMean, PublishedRowsExamples) {
  EXPECT_NEAR(harmonic_mean(51.53, 18.43), 27.15, 0.01);
  EXPECT_NEAR(harmonic_mean(26.04, 8.21), 12.48, 0.01);
}

// (18.15, 3.48) recomputes to 5.8402, 0.0102 away from the printed 5.83.
TEST(HarmonicMean, PublishedRowsWithinToleranceExceptOne) {
  std::vector<std::string> off;
  for (const auto& r : testing::kPublishedRows) {
    if (std::abs(harmonic_mean(r.S, r.U) - r.HM) > testing::kPublishedHmTolerance) off.push_back(std::string(r.method) + "/" + r.dataset);
  }
  EXPECT_EQ(off, std::vector<std::string>{"AVGZSLNet/VGGSound"});
  EXPECT_NEAR(harmonic_mean(18.15, 3.48), 5.8402, 1e-4);
}

TEST(HarmonicMean, DegenerateCases) {
  EXPECT_DOUBLE_EQ(harmonic_mean(0.4, 0.4), 0.4);
  EXPECT_EQ(harmonic_mean(0.7, 0.0), 0.0);
  EXPECT_EQ(harmonic_mean(0.0, 0.7), 0.0);
  EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
}

TEST(HarmonicMeanProperty, SymmetryAndMeanInequalities) {
  Rng rng(22);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s = rng.uniform(), u = rng.uniform();
    const double hm = harmonic_mean(s, u);
    EXPECT_DOUBLE_EQ(hm, harmonic_mean(u, s));
    if (s > 0 && u > 0) {
      EXPECT_LE(hm, std::sqrt(s * u) * (1 + 1e-12));
      EXPECT_LE(std::sqrt(s * u), 0.5 * (s + u) * (1 + 1e-12));
      EXPECT_GE(hm, std::min(s, u) * (1 - 1e-12));
      EXPECT_LE(hm, std::max(s, u) * (1 + 1e-12));
    }
  }
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(std::vector<double>{0, 1, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>(7, 1.0 / 7)), std::log(7.0), 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.5}), 0.6931, 1e-4);
}

TEST(Entropy, RejectsUnnormalized) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), ValidationError);
  EXPECT_THROW(entropy(std::vector<double>{1.2, -0.2}), ValidationError);
  EXPECT_NO_THROW(entropy(std::vector<double>{0.5, 0.5 + 5e-6}));
}

TEST(EntropyProperty, RangeAndPermutationInvariance) {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng.index(10);
    std::vector<double> p(k);
    double total = 0.0;
    for (auto& x : p) total += x = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    if (total == 0.0) p[0] = total = 1.0;
    for (auto& x : p) x /= total;
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);
    rng.shuffle(std::span<double>(p));
    EXPECT_NEAR(entropy(p), h, 1e-12);
  }
}

TEST(RocCurve, PerfectSeparationReachesTopLeft) {
  const auto c = roc_curve(std::vector<double>{0.9, 0.8, 0.2, 0.1}, {true, true, false, false});
  EXPECT_NE(std::find(c.points.begin(), c.points.end(), RocPoint{0.0, 1.0}), c.points.end());
  EXPECT_DOUBLE_EQ(auc(c), 1.0);
  EXPECT_DOUBLE_EQ(fpr_at_tpr(c), 0.0);
}

TEST(RocCurve, UninformativeScorer) {
  const auto c = roc_curve(std::vector<double>{0.3, 0.3, 0.3, 0.3, 0.3}, {true, false, true, false, false});
  EXPECT_EQ(c.points, (std::vector<RocPoint>{{0, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(auc(c), 0.5);
  EXPECT_NEAR(fpr_at_tpr(c), 0.6, 1e-12);
}

TEST(RocCurve, ThreeOfFourPairsOrdered) {
  const auto c = roc_curve(std::vector<double>{0.9, 0.4, 0.6, 0.1}, {true, true, false, false});
  EXPECT_DOUBLE_EQ(auc(c), 0.75);
}

TEST(RocCurve, NegatedScoresFlipAuc) {
  const std::vector<double> s{0.9, 0.4, 0.6, 0.1, 0.5};
  const std::vector<double> neg{-0.9, -0.4, -0.6, -0.1, -0.5};
  const std::vector<bool> seen{true, true, false, false, true};
  EXPECT_NEAR(auc(roc_curve(neg, seen)), 1.0 - auc(roc_curve(s, seen)), 1e-15);
}

TEST(RocCurve, RejectsSingleClass) {
  EXPECT_THROW(roc_curve(std::vector<double>{0.1, 0.2}, {true, true}), ValidationError);
  EXPECT_THROW(roc_curve(std::vector<double>{0.1}, {true, false}), ValidationError);
}

TEST(FprAtTpr, InterpolatesOnDiagonal) {
  RocCurve c;
  c.points = {{0, 0}, {0.5, 0.5}, {1, 1}};
  EXPECT_NEAR(fpr_at_tpr(c, 0.6), 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(fpr_at_tpr(c, 0.5), 0.5);
}

TEST(RocProperty, AucMatchesPairwiseConcordance) {
  Rng rng(24);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_scores(rng);
    EXPECT_NEAR(auc(roc_curve(s.scores, s.is_seen)), concordance(s.scores, s.is_seen), 1e-12) << "trial " << trial;
  }
}

TEST(RocProperty, CurveIsMonotoneAndAnchored) {
  Rng rng(25);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_scores(rng);
    const auto c = roc_curve(s.scores, s.is_seen);
    ASSERT_GE(c.points.size(), 2u);
    EXPECT_EQ(c.points.front(), (RocPoint{0, 0}));
    EXPECT_EQ(c.points.back(), (RocPoint{1, 1}));
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
      EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
    }
    for (const auto& p : c.points) {
      EXPECT_GE(p.fpr, 0.0);
      EXPECT_LE(p.fpr, 1.0);
      EXPECT_GE(p.tpr, 0.0);
      EXPECT_LE(p.tpr, 1.0);
    }
    const double f = fpr_at_tpr(c);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(GZSLReport, JsonFieldNames) {
  const GZSLReport r{0.5, 0.25, harmonic_mean(0.5, 0.25), 0.3, 0.9, 0.1, 0.8, 0.3};
  const nlohmann::json j = r;
  for (const char* k : {"S", "U", "HM", "ZSL", "AUC", "FPR_at_TPR60", "SC_acc", "UC_acc"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_DOUBLE_EQ(j.get<GZSLReport>().HM, r.HM);
}

}  // namespace
}  // namespace avood::metrics
