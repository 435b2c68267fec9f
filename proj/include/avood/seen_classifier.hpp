// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avood/autograd.hpp"
#include "avood/checkpoint.hpp"
#include "avood/data.hpp"
#include "avood/nn.hpp"
#include "avood/train_util.hpp"

namespace avood::seen {

using ag::Matrix;
using ag::Var;

struct SeenConfig {
  int hidden1 = 512;
  int hidden2 = 256;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SeenConfig, hidden1, hidden2, learning_rate, epochs, batch_size, seed)

// Softmax classifier over the seen classes only.
template <class T = float>
struct SeenClassifierModel {
  nn::Mlp<T> network;
  std::vector<ClassId> classes;  // output column -> class id
  SeenConfig config;

  nn::NamedParams<T> params() {
    nn::NamedParams<T> p;
    network.collect("network", p);
    return p;
  }
};

template <class T>
SeenClassifierModel<T> make_seen_classifier(Eigen::Index in_dim, std::vector<ClassId> classes, const SeenConfig& c,
                                            Rng& rng) {
  SeenClassifierModel<T> m;
  m.classes = std::move(classes);
  m.config = c;
  m.network = nn::Mlp<T>({in_dim, c.hidden1, c.hidden2, static_cast<Eigen::Index>(m.classes.size())},
                         nn::Activation::kRelu, rng);
  return m;
}

struct SeenPrediction {
  std::vector<ClassId> labels;
  Matrix<double> probabilities;  // rows sum to 1, columns follow `classes`
};

// Argmax over the seen classes; exact ties go to the lowest column.
template <class T>
SeenPrediction classify_seen(const SeenClassifierModel<T>& m, const FeatureMatrix& x) {
  if (x.cols() != m.network.in_dim()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "seen classifier input dimension mismatch");
  }
  SeenPrediction out;
  out.probabilities = ag::softmax_value<double>(m.network(Var<T>::constant(x.cast<T>())).value().template cast<double>());
  for (Eigen::Index i = 0; i < out.probabilities.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < out.probabilities.cols(); ++j) {
      if (out.probabilities(i, j) > out.probabilities(i, best)) best = j;
    }
    out.labels.push_back(m.classes[static_cast<std::size_t>(best)]);
  }
  return out;
}

template <class T = float>
struct SeenTraining {
  SeenClassifierModel<T> model;
  std::vector<double> trace;
};

// Cross-entropy training on an explicit labelled batch.
template <class T = float>
SeenTraining<T> train_seen_on(const FusedBatch& data, const SeenConfig& c) {
  std::set<ClassId> set(data.labels.begin(), data.labels.end());
  require(set.size() >= 2, "seen classifier needs at least two classes");
  std::vector<ClassId> classes(set.begin(), set.end());
  std::map<ClassId, int> column;
  for (std::size_t k = 0; k < classes.size(); ++k) column[classes[k]] = static_cast<int>(k);

  Rng init(mix_seed(c.seed, 31));
  Rng rng(mix_seed(c.seed, 32));
  SeenTraining<T> out{make_seen_classifier<T>(data.features.cols(), classes, c, init), {}};
  nn::Adam<T> opt(out.model.params(), {c.learning_rate, 0.9, 0.999, 1e-8});
  std::int64_t step = 0;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    auto order = iota_index(data.size());
    rng.shuffle(std::span(order));
    const auto batches = minibatches(order, std::max(1, c.batch_size));
    double total = 0.0;
    for (const auto& idx : batches) {
      std::vector<int> targets;
      for (auto i : idx) targets.push_back(column.at(data.labels[static_cast<std::size_t>(i)]));
      Var<T> loss = ag::cross_entropy(out.model.network(Var<T>::constant(take_rows<T>(data.features, idx))), targets);
      guard_loss(loss.scalar(), step++, "seen classifier loss");
      opt.zero_grad();
      ag::backward(loss);
      opt.step();
      total += loss.scalar();
    }
    out.trace.push_back(total / static_cast<double>(batches.size()));
  }
  opt.zero_grad();
  return out;
}

template <class T = float>
SeenTraining<T> train_seen(const DatasetBundle& bundle, const SeenConfig& c) {
  return train_seen_on<T>(fused_split(bundle, Split::kTrainSeen), c);
}

inline constexpr const char* kCheckpointKind = "seen_classifier";

template <class T>
void save(SeenClassifierModel<T>& m, const std::filesystem::path& dir) {
  json meta = {{"classes", m.classes}, {"in_dim", m.network.in_dim()}, {"config", m.config}, {"seed", m.config.seed}};
  save_checkpoint<T>(dir, kCheckpointKind, meta, const_params(m.params()));
}

template <class T = float>
SeenClassifierModel<T> load(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "manifest.json").at("meta");
  Rng rng(0);
  auto m = make_seen_classifier<T>(meta.at("in_dim").get<Eigen::Index>(), meta.at("classes").get<std::vector<ClassId>>(),
                                   meta.at("config").get<SeenConfig>(), rng);
  load_checkpoint<T>(dir, kCheckpointKind, m.params());
  return m;
}

}  // namespace avood::seen
