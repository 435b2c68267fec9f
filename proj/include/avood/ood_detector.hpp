// SPDX-License-Identifier: Apache-2.0
//
// Seen/unseen gate over fused features. Two variants share one network shape
// (fused -> 512 -> 128 -> head):
//   binary:  a single logit, trained with BCE (real seen = 1, synthesized = 0);
//   entropy: a softmax over the K seen classes, trained so real features get
//            low entropy and synthesized unseen features high entropy.
// Scores are always exposed as "seen-ness": higher means more likely seen.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "avood/autograd.hpp"
#include "avood/checkpoint.hpp"
#include "avood/data.hpp"
#include "avood/metrics.hpp"
#include "avood/nn.hpp"
#include "avood/train_util.hpp"

namespace avood::ood {

using ag::Matrix;
using ag::Var;

enum class Variant { kBinary, kEntropy };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::kBinary, "binary"}, {Variant::kEntropy, "entropy"}})

enum class Decision { kSeen, kUnseen };

struct OodConfig {
  int hidden1 = 512;
  int hidden2 = 128;
  double learning_rate = 1e-3;
  int epochs = 80;
  int batch_size = 64;  // half real, half synthesized
  std::uint64_t seed = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OodConfig, hidden1, hidden2, learning_rate, epochs, batch_size, seed)

template <class T = float>
struct OodDetectorModel {
  Variant variant = Variant::kEntropy;
  nn::Mlp<T> network;
  // Binary: cut on the sigmoid output. Entropy: cut on the entropy, in [0, ln K].
  double threshold = 0.5;
  std::vector<ClassId> seen_index;  // softmax column -> class id (entropy variant)
  OodConfig config;

  int num_seen() const { return static_cast<int>(seen_index.size()); }

  nn::NamedParams<T> params() {
    nn::NamedParams<T> p;
    network.collect("network", p);
    return p;
  }
};

template <class T>
OodDetectorModel<T> make_detector(Variant variant, Eigen::Index in_dim, std::vector<ClassId> seen, const OodConfig& c,
                                  Rng& rng) {
  OodDetectorModel<T> m;
  m.variant = variant;
  m.config = c;
  m.seen_index = std::move(seen);
  const Eigen::Index out = variant == Variant::kBinary ? 1 : static_cast<Eigen::Index>(m.seen_index.size());
  m.network = nn::Mlp<T>({in_dim, c.hidden1, c.hidden2, out}, nn::Activation::kRelu, rng);
  m.threshold = variant == Variant::kBinary ? 0.5 : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Losses

// BCE(O(x), 1) + BCE(O(x~), 0), each averaged over its half.
template <class T>
Var<T> binary_loss(const Var<T>& real_logits, const Var<T>& synth_logits) {
  Var<T> pos = ag::mean_all(ag::bce_with_logits<T>(real_logits, Matrix<T>::Ones(real_logits.rows(), 1)));
  Var<T> neg = ag::mean_all(ag::bce_with_logits<T>(synth_logits, Matrix<T>::Zero(synth_logits.rows(), 1)));
  return ag::add(pos, neg);
}

// mean H(O(x)) - mean H(O(x~)).
template <class T>
Var<T> entropy_loss(const Var<T>& real_logits, const Var<T>& synth_logits) {
  return ag::sub(ag::mean_all(ag::softmax_entropy(real_logits)), ag::mean_all(ag::softmax_entropy(synth_logits)));
}

// Entropy loss plus cross-entropy on the real (labelled) half only.
template <class T>
Var<T> ood_loss(const Var<T>& real_logits, const Var<T>& synth_logits, const std::vector<int>& real_targets) {
  return ag::add(entropy_loss(real_logits, synth_logits), ag::cross_entropy(real_logits, real_targets));
}

// ---------------------------------------------------------------------------
// Inference

template <class T>
Matrix<double> logits(const OodDetectorModel<T>& m, const FeatureMatrix& x) {
  if (x.cols() != m.network.in_dim()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "detector input dimension mismatch");
  }
  return m.network(Var<T>::constant(x.cast<T>())).value().template cast<double>();
}

// Per-row entropy of the entropy variant's seen-class distribution.
template <class T>
std::vector<double> entropies(const OodDetectorModel<T>& m, const FeatureMatrix& x) {
  require(m.variant == Variant::kEntropy, "entropies need the entropy variant");
  const Matrix<double> p = ag::softmax_value(logits(m, x));
  std::vector<double> h(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0.0) acc -= p(i, j) * std::log(p(i, j));
    }
    h[static_cast<std::size_t>(i)] = std::max(acc, 0.0);
  }
  return h;
}

// Seen-ness: sigmoid output (binary) or negated entropy (entropy).
template <class T>
std::vector<double> ood_score(const OodDetectorModel<T>& m, const FeatureMatrix& x) {
  if (m.variant == Variant::kEntropy) {
    auto h = entropies(m, x);
    for (double& v : h) v = -v;
    return h;
  }
  const Matrix<double> l = logits(m, x);
  std::vector<double> s(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index i = 0; i < l.rows(); ++i) s[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-l(i, 0)));
  return s;
}

// The threshold expressed on the seen-ness scale.
template <class T>
double seen_threshold(const OodDetectorModel<T>& m) {
  return m.variant == Variant::kEntropy ? -m.threshold : m.threshold;
}

// SEEN iff score >= oriented threshold; ties go to SEEN.
inline Decision decide(double score, double seen_threshold) {
  return score >= seen_threshold ? Decision::kSeen : Decision::kUnseen;
}

template <class T>
std::vector<Decision> detect(const OodDetectorModel<T>& m, const FeatureMatrix& x) {
  const auto scores = ood_score(m, x);
  const double thr = seen_threshold(m);
  std::vector<Decision> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(decide(s, thr));
  return out;
}

// tau = mean entropy over the given (training) seen features; stored on the model.
template <class T>
double select_threshold_mean_entropy(OodDetectorModel<T>& m, const FeatureMatrix& train_seen) {
  require(m.variant == Variant::kEntropy, "mean-entropy threshold needs the entropy variant");
  require(train_seen.rows() > 0, "mean-entropy threshold needs a non-empty batch");
  const auto h = entropies(m, train_seen);
  double sum = 0.0;
  for (double v : h) sum += v;
  m.threshold = sum / static_cast<double>(h.size());
  return m.threshold;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

template <class T, class LossFn>
std::vector<double> train_mixed(OodDetectorModel<T>& m, const FusedBatch& real, const FusedBatch& synth,
                                const OodConfig& c, LossFn&& loss_fn) {
  nn::Adam<T> opt(m.params(), {c.learning_rate, 0.9, 0.999, 1e-8});
  Rng rng(mix_seed(c.seed, 22));
  const Eigen::Index half = std::max<Eigen::Index>(1, c.batch_size / 2);
  std::vector<double> trace;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    auto real_order = iota_index(real.size());
    auto synth_order = iota_index(synth.size());
    rng.shuffle(std::span(real_order));
    rng.shuffle(std::span(synth_order));
    std::size_t synth_pos = 0;
    double total = 0.0;
    const auto batches = minibatches(real_order, half);
    for (const auto& real_idx : batches) {
      std::vector<Eigen::Index> synth_idx;
      for (std::size_t k = 0; k < real_idx.size(); ++k) {
        synth_idx.push_back(synth_order[synth_pos]);
        synth_pos = (synth_pos + 1) % synth_order.size();
      }
      Var<T> real_logits = m.network(Var<T>::constant(take_rows<T>(real.features, real_idx)));
      Var<T> synth_logits = m.network(Var<T>::constant(take_rows<T>(synth.features, synth_idx)));
      Var<T> loss = loss_fn(real_logits, synth_logits, real_idx);
      guard_loss(loss.scalar(), step++, "ood loss");
      opt.zero_grad();
      ag::backward(loss);
      opt.step();
      total += loss.scalar();
    }
    trace.push_back(total / static_cast<double>(batches.size()));
  }
  opt.zero_grad();
  return trace;
}

inline void check_inputs(const FusedBatch& real, const FusedBatch& synth) {
  require(real.size() > 0 && synth.size() > 0, "detector training needs real and synthesized samples");
  if (real.features.cols() != synth.features.cols()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "real and synthesized dimensions differ");
  }
}

}  // namespace detail

template <class T = float>
struct DetectorTraining {
  OodDetectorModel<T> model;
  std::vector<double> trace;
};

template <class T = float>
DetectorTraining<T> train_binary(const FusedBatch& real, const FusedBatch& synth, const OodConfig& c) {
  detail::check_inputs(real, synth);
  Rng init(mix_seed(c.seed, 21));
  DetectorTraining<T> out{make_detector<T>(Variant::kBinary, real.features.cols(), {}, c, init), {}};
  out.trace = detail::train_mixed(out.model, real, synth, c,
                                  [](const Var<T>& r, const Var<T>& s, const auto&) { return binary_loss(r, s); });
  out.model.threshold = 0.5;
  return out;
}

// `real.labels` must all be seen classes; the softmax covers exactly those
// classes (sorted by id).
template <class T = float>
DetectorTraining<T> train_entropy(const FusedBatch& real, const FusedBatch& synth, const OodConfig& c) {
  detail::check_inputs(real, synth);
  std::set<ClassId> seen(real.labels.begin(), real.labels.end());
  require(seen.size() >= 2, "entropy detector needs at least two seen classes");
  std::vector<ClassId> seen_index(seen.begin(), seen.end());
  std::map<ClassId, int> column;
  for (std::size_t k = 0; k < seen_index.size(); ++k) column[seen_index[k]] = static_cast<int>(k);
  std::vector<int> targets;
  for (ClassId l : real.labels) targets.push_back(column.at(l));

  Rng init(mix_seed(c.seed, 21));
  DetectorTraining<T> out{make_detector<T>(Variant::kEntropy, real.features.cols(), seen_index, c, init), {}};
  out.trace = detail::train_mixed(out.model, real, synth, c,
                                  [&](const Var<T>& r, const Var<T>& s, const std::vector<Eigen::Index>& idx) {
                                    std::vector<int> batch_targets;
                                    for (auto i : idx) batch_targets.push_back(targets[static_cast<std::size_t>(i)]);
                                    return ood_loss(r, s, batch_targets);
                                  });
  select_threshold_mean_entropy(out.model, real.features);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr const char* kCheckpointKind = "ood_detector";

template <class T>
void save(OodDetectorModel<T>& m, const std::filesystem::path& dir) {
  json meta = {{"variant", m.variant},
               {"threshold", m.threshold},
               {"seen_index", m.seen_index},
               {"in_dim", m.network.in_dim()},
               {"config", m.config},
               {"seed", m.config.seed}};
  save_checkpoint<T>(dir, kCheckpointKind, meta, const_params(m.params()));
}

template <class T = float>
OodDetectorModel<T> load(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "manifest.json").at("meta");
  Rng rng(0);
  auto m = make_detector<T>(meta.at("variant").get<Variant>(), meta.at("in_dim").get<Eigen::Index>(),
                            meta.at("seen_index").get<std::vector<ClassId>>(), meta.at("config").get<OodConfig>(), rng);
  load_checkpoint<T>(dir, kCheckpointKind, m.params());
  m.threshold = meta.at("threshold").get<double>();
  return m;
}

}  // namespace avood::ood
