// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "avood/ood_detector.hpp"
#include "support.hpp"

namespace avood::ood {
namespace {

using testing::random_matrix;
using testing::TempDir;

// Two well separated blobs: seen classes around +3, "synthesized" around -3.
struct Blobs {
  FusedBatch real;
  FusedBatch synth;
};

Blobs separated_blobs(int per_class, Rng& rng) {
  Blobs b;
  b.real.features.resize(3 * per_class, 4);
  b.synth.features.resize(per_class, 4);
  b.synth.origin = Origin::kSynthesized;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < per_class; ++i) {
      const int r = k * per_class + i;
      for (int j = 0; j < 4; ++j) b.real.features(r, j) = static_cast<float>((j == k ? 6.0 : 3.0) + 0.2 * rng.normal());
      b.real.labels.push_back(k);
    }
  }
  for (int i = 0; i < per_class; ++i) {
    for (int j = 0; j < 4; ++j) b.synth.features(i, j) = static_cast<float>(-3.0 + 0.2 * rng.normal());
    b.synth.labels.push_back(9);
  }
  return b;
}

OodConfig small_config() {
  OodConfig c;
  c.hidden1 = 16;
  c.hidden2 = 8;
  c.epochs = 40;
  c.batch_size = 32;
  c.learning_rate = 5e-3;
  c.seed = 4;
  return c;
}

// Detector whose last layer is replaced so that the logits are known.
OodDetectorModel<float> fixed_logit_detector(Variant v, int k, const Matrix<float>& head_bias, float threshold) {
  Rng rng(1);
  OodConfig c;
  c.hidden1 = 2;
  c.hidden2 = 2;
  std::vector<ClassId> seen;
  for (int i = 0; i < k; ++i) seen.push_back(i);
  auto m = make_detector<float>(v, 3, v == Variant::kEntropy ? seen : std::vector<ClassId>{}, c, rng);
  m.network.layers().back().weight().mutable_value().setZero();
  m.network.layers().back().bias().mutable_value() = head_bias;
  m.threshold = threshold;
  return m;
}

TEST(BinaryLoss, HalfProbabilityCostsLn2PerTerm) {
  const auto zero = Var<double>::constant(Matrix<double>::Zero(4, 1));
  EXPECT_NEAR(binary_loss(zero, zero).scalar(), 2.0 * std::numbers::ln2, 1e-12);
}

TEST(EntropyLoss, UniformOutputs) {
  const auto uniform = Var<double>::constant(Matrix<double>::Zero(5, 4));
  EXPECT_NEAR(entropy_loss(uniform, uniform).scalar(), 0.0, 1e-12);
  EXPECT_NEAR(ag::cross_entropy(uniform, {0, 1, 2, 3, 0}).scalar(), std::log(4.0), 1e-12);
}

TEST(EntropyLossProperty, PerSampleBounded) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(6));
    const auto a = Var<double>::constant(random_matrix(1, k, rng, 4.0));
    const auto b = Var<double>::constant(random_matrix(1, k, rng, 4.0));
    const double l = entropy_loss(a, b).scalar();
    EXPECT_GE(l, -std::log(double(k)) - 1e-12);
    EXPECT_LE(l, std::log(double(k)) + 1e-12);
  }
}

TEST(TrainBinary, SeparatesBlobs) {
  Rng rng(3);
  const auto blobs = separated_blobs(40, rng);
  const auto out = train_binary(blobs.real, blobs.synth, small_config());
  EXPECT_EQ(out.model.variant, Variant::kBinary);
  EXPECT_DOUBLE_EQ(out.model.threshold, 0.5);
  EXPECT_EQ(out.trace.size(), 40u);
  int correct = 0;
  for (auto d : detect(out.model, blobs.real.features)) correct += d == Decision::kSeen;
  for (auto d : detect(out.model, blobs.synth.features)) correct += d == Decision::kUnseen;
  EXPECT_GE(correct / 160.0, 0.99);
  for (double s : ood_score(out.model, blobs.real.features)) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(TrainBinary, Deterministic) {
  Rng rng(4);
  const auto blobs = separated_blobs(10, rng);
  auto c = small_config();
  c.epochs = 3;
  auto a = train_binary(blobs.real, blobs.synth, c);
  auto b = train_binary(blobs.real, blobs.synth, c);
  const auto pa = a.model.params(), pb = b.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].second->value(), pb[i].second->value());
}

TEST(TrainEntropy, SeenLowUnseenHigh) {
  Rng rng(5);
  const auto blobs = separated_blobs(40, rng);
  const auto out = train_entropy(blobs.real, blobs.synth, small_config());
  EXPECT_EQ(out.model.variant, Variant::kEntropy);
  EXPECT_EQ(out.model.seen_index, (std::vector<ClassId>{0, 1, 2}));
  const auto hr = entropies(out.model, blobs.real.features);
  const auto hs = entropies(out.model, blobs.synth.features);
  double mr = 0, ms = 0;
  for (double h : hr) mr += h / hr.size();
  for (double h : hs) ms += h / hs.size();
  EXPECT_LT(mr, ms);
  EXPECT_NEAR(out.model.threshold, mr, 1e-6);
  EXPECT_GE(out.model.threshold, 0.0);
  EXPECT_LE(out.model.threshold, std::log(3.0));
}

TEST(TrainEntropy, NeedsTwoSeenClasses) {
  Rng rng(6);
  auto blobs = separated_blobs(5, rng);
  std::fill(blobs.real.labels.begin(), blobs.real.labels.end(), 0);
  EXPECT_THROW(train_entropy(blobs.real, blobs.synth, small_config()), ValidationError);
  FusedBatch empty;
  empty.features.resize(0, 4);
  EXPECT_THROW(train_binary(blobs.real, empty, small_config()), ValidationError);
}

TEST(OodScore, OneHotAndUniform) {
  Matrix<float> one_hot(1, 4);
  one_hot << 60, 0, 0, 0;
  const Matrix<float> x = Matrix<float>::Zero(2, 3);
  EXPECT_NEAR(ood_score(fixed_logit_detector(Variant::kEntropy, 4, one_hot, 0.2f), x)[0], 0.0, 1e-12);
  const auto uniform = fixed_logit_detector(Variant::kEntropy, 4, Matrix<float>::Zero(1, 4), 0.2f);
  EXPECT_NEAR(ood_score(uniform, x)[1], -std::log(4.0), 1e-6);
  EXPECT_EQ(detect(uniform, x)[0], Decision::kUnseen);
  EXPECT_THROW(ood_score(uniform, Matrix<float>::Zero(1, 5)), ValidationError);
}

TEST(Detect, ThresholdBoundaryGoesToSeen) {
  EXPECT_EQ(decide(-0.2, -0.2), Decision::kSeen);
  EXPECT_EQ(decide(0.0, -0.2), Decision::kSeen);
  EXPECT_EQ(decide(-0.3, -0.2), Decision::kUnseen);
  const auto uniform = fixed_logit_detector(Variant::kEntropy, 3, Matrix<float>::Zero(1, 3), 0.0f);
  auto m = uniform;
  m.threshold = entropies(m, Matrix<float>::Zero(1, 3))[0];
  EXPECT_EQ(detect(m, Matrix<float>::Zero(1, 3))[0], Decision::kSeen);
}

TEST(SelectThreshold, MeanOfBatchEntropies) {
  Rng rng(7);
  OodConfig c;
  c.hidden1 = 4;
  c.hidden2 = 4;
  auto m = make_detector<float>(Variant::kEntropy, 3, {0, 1, 2}, c, rng);
  const Matrix<float> x = random_matrix(2, 3, rng).cast<float>();
  const auto h = entropies(m, x);
  EXPECT_NEAR(select_threshold_mean_entropy(m, x), (h[0] + h[1]) / 2, 1e-12);
  EXPECT_NEAR(select_threshold_mean_entropy(m, x.topRows(1)), h[0], 1e-12);
  EXPECT_DOUBLE_EQ(m.threshold, h[0]);
  auto b = make_detector<float>(Variant::kBinary, 3, {}, c, rng);
  EXPECT_THROW(select_threshold_mean_entropy(b, x), ValidationError);
}

TEST(OodProperty, ScoreRangesAndExclusiveDecisions) {
  Rng rng(8);
  OodConfig c;
  c.hidden1 = 6;
  c.hidden2 = 5;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(4));
    auto ent = make_detector<float>(Variant::kEntropy, 3, std::vector<ClassId>(k, 0), c, rng);
    auto bin = make_detector<float>(Variant::kBinary, 3, {}, c, rng);
    ent.threshold = rng.uniform(0.0, std::log(double(k)));
    const Matrix<float> x = random_matrix(3, 3, rng, 3.0).cast<float>();
    const auto se = ood_score(ent, x);
    const auto sb = ood_score(bin, x);
    const auto de = detect(ent, x);
    for (std::size_t i = 0; i < se.size(); ++i) {
      EXPECT_LE(se[i], 0.0);
      EXPECT_GE(se[i], -std::log(double(k)) - 1e-6);
      EXPECT_GT(sb[i], 0.0);
      EXPECT_LT(sb[i], 1.0);
      EXPECT_EQ(de[i] == Decision::kSeen, se[i] >= -ent.threshold);
    }
    EXPECT_EQ(detect(ent, x), de);
  }
}

// Mixing a distribution toward one-hot lowers its entropy, so a SEEN decision
// at fixed tau is never lost.
TEST(OodProperty, SharpeningNeverFlipsSeenToUnseen) {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(6));
    std::vector<double> p(k);
    double total = 0;
    for (auto& v : p) total += v = rng.uniform() + 1e-3;
    for (auto& v : p) v /= total;
    const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const double tau = rng.uniform(0.0, std::log(double(k)));
    const double lambda = rng.uniform();
    std::vector<double> q(p);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] = (1 - lambda) * p[j] + lambda * (j == top ? 1.0 : 0.0);
    if (decide(-metrics::entropy(p), -tau) == Decision::kSeen) {
      EXPECT_EQ(decide(-metrics::entropy(q), -tau), Decision::kSeen);
    }
  }
}

TEST(OodCheckpoint, RoundTripKeepsThresholdAndVariant) {
  TempDir dir("ood_ckpt");
  Rng rng(10);
  OodConfig c;
  c.hidden1 = 5;
  c.hidden2 = 3;
  auto m = make_detector<float>(Variant::kEntropy, 4, {2, 5, 7}, c, rng);
  m.threshold = 0.4321;
  save(m, dir.path());
  auto loaded = load(dir.path());
  EXPECT_EQ(loaded.variant, Variant::kEntropy);
  EXPECT_EQ(loaded.seen_index, m.seen_index);
  EXPECT_DOUBLE_EQ(loaded.threshold, 0.4321);
  const Matrix<float> x = random_matrix(6, 4, rng).cast<float>();
  EXPECT_EQ(ood_score(loaded, x), ood_score(m, x));
}

}  // namespace
}  // namespace avood::ood
