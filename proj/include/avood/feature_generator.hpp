// SPDX-License-Identifier: Apache-2.0
//
// Conditional WGAN-GP feature generator.
//
// G maps (z, t) to a fused audio-visual feature, the critic D scores (x, t),
// and a decoder maps generated features back to the text-embedding space.
// The generator only ever sees seen-class features; at inference it is
// conditioned on unseen-class embeddings to synthesize unseen features.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avood/autograd.hpp"
#include "avood/checkpoint.hpp"
#include "avood/data.hpp"
#include "avood/nn.hpp"
#include "avood/rng.hpp"
#include "avood/train_util.hpp"

namespace avood::generator {

using ag::Matrix;
using ag::Var;

struct GeneratorConfig {
  int noise_dim = 16;
  double lambda = 10.0;  // gradient-penalty coefficient
  double alpha = 0.1;    // reconstruction-loss weight
  double beta = 0.01;    // embedding-loss weight
  double margin = 0.0;   // cosine-embedding margin for unmatched pairs
  int critic_steps_per_generator_step = 5;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int epochs = 5;
  int batch_size = 64;
  int hidden = 256;
  int decoder_hidden = 128;
  std::uint64_t seed = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, noise_dim, lambda, alpha, beta, margin,
                                                critic_steps_per_generator_step, learning_rate, adam_beta1,
                                                adam_beta2, epochs, batch_size, hidden, decoder_hidden, seed)

inline void check_config(const GeneratorConfig& c) {
  require(c.lambda > 0.0, "lambda must be positive");
  require(c.alpha >= 0.0 && c.beta >= 0.0, "alpha and beta must be non-negative");
  require(c.critic_steps_per_generator_step >= 1, "critic_steps_per_generator_step must be at least 1");
  require(c.noise_dim >= 1 && c.batch_size >= 1 && c.epochs >= 0, "noise_dim, batch_size must be positive");
}

template <class T = float>
struct GeneratorModel {
  nn::Mlp<T> generator;  // [noise + d_t] -> fused
  nn::Mlp<T> critic;     // [fused + d_t] -> 1
  nn::Mlp<T> decoder;    // fused -> d_t
  GeneratorConfig config;
  Dims dims;

  GeneratorModel() = default;
  GeneratorModel(const Dims& d, const GeneratorConfig& c, Rng& rng) : config(c), dims(d) {
    const Eigen::Index fused = d.fused();
    generator = nn::Mlp<T>({c.noise_dim + d.text, c.hidden, c.hidden, fused}, nn::Activation::kLeakyRelu, rng);
    critic = nn::Mlp<T>({fused + d.text, c.hidden, c.hidden, 1}, nn::Activation::kLeakyRelu, rng);
    decoder = nn::Mlp<T>({fused, c.decoder_hidden, d.text}, nn::Activation::kLeakyRelu, rng);
  }

  Var<T> generate(const Var<T>& noise, const Var<T>& text) const { return generator(ag::concat_cols(noise, text)); }
  Var<T> score(const Var<T>& x, const Var<T>& text) const { return critic(ag::concat_cols(x, text)); }

  nn::NamedParams<T> generator_params() {
    nn::NamedParams<T> p;
    generator.collect("generator", p);
    decoder.collect("decoder", p);
    return p;
  }
  nn::NamedParams<T> critic_params() {
    nn::NamedParams<T> p;
    critic.collect("critic", p);
    return p;
  }
  nn::NamedParams<T> params() {
    auto p = generator_params();
    auto c = critic_params();
    p.insert(p.end(), c.begin(), c.end());
    return p;
  }
};

// ---------------------------------------------------------------------------
// Loss terms

// Gradient of the critic with respect to its feature input, built as a graph
// over the critic parameters. Hidden activations are piecewise linear, so
// the input gradient is a product of weight matrices and constant slope
// masks; differentiating that product is exact away from activation kinks.
template <class T>
Var<T> critic_input_gradient(const nn::Mlp<T>& critic, const Matrix<T>& features, const Matrix<T>& text) {
  Matrix<T> input(features.rows(), features.cols() + text.cols());
  input << features, text;
  const auto slopes = critic.activation_slopes(input);
  const auto& layers = critic.layers();
  const Eigen::Index batch = features.rows();
  const Var<T> ones = Var<T>::constant(Matrix<T>::Ones(batch, 1));

  // Rows of `back` hold d score / d h_l for each sample, walking from the output down.
  Var<T> back = ag::matmul(ones, ag::transpose(layers.back().weight().var()));
  for (std::size_t l = layers.size() - 1; l-- > 0;) {
    back = ag::mul(Var<T>::constant(slopes[l]), back);
    back = ag::matmul(back, ag::transpose(layers[l].weight().var()));
  }
  return ag::slice_cols(back, 0, features.cols());
}

// lambda * mean over rows of (||grad_x D(x_hat, t)||_2 - 1)^2, with t held fixed.
template <class T>
Var<T> gradient_penalty(const nn::Mlp<T>& critic, const Matrix<T>& interpolates, const Matrix<T>& text, T lambda) {
  Var<T> grad = critic_input_gradient(critic, interpolates, text);
  Var<T> deviation = ag::add_scalar(ag::row_norm(grad), T(-1));
  return ag::scale(ag::mean_all(ag::square(deviation)), lambda);
}

template <class T>
struct CriticBatch {
  Matrix<T> real;
  Matrix<T> fake;
  Matrix<T> interpolates;
  Matrix<T> condition;
};

// x_hat = eps * x + (1 - eps) * x_tilde with one eps ~ U[0,1] per row.
template <class T>
CriticBatch<T> make_critic_batch(Matrix<T> real, Matrix<T> fake, Matrix<T> condition, Rng& rng) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols() || condition.rows() != real.rows()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "critic batch parts differ in shape");
  }
  Matrix<T> interp(real.rows(), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    const T eps = static_cast<T>(rng.uniform());
    interp.row(i) = eps * real.row(i) + (T(1) - eps) * fake.row(i);
  }
  return {std::move(real), std::move(fake), std::move(interp), std::move(condition)};
}

// The quantity the critic minimizes: -(E[D(x,t)] - E[D(x~,t)] - GP).
template <class T>
Var<T> critic_loss(const nn::Mlp<T>& critic, const CriticBatch<T>& batch, T lambda) {
  const Var<T> t = Var<T>::constant(batch.condition);
  Var<T> real_score = ag::mean_all(critic(ag::concat_cols(Var<T>::constant(batch.real), t)));
  Var<T> fake_score = ag::mean_all(critic(ag::concat_cols(Var<T>::constant(batch.fake), t)));
  Var<T> penalty = gradient_penalty(critic, batch.interpolates, batch.condition, lambda);
  return ag::add(ag::sub(fake_score, real_score), penalty);
}

template <class T>
Var<T> reconstruction_loss(const nn::Mlp<T>& decoder, const Var<T>& fake, const Matrix<T>& text) {
  return ag::mse(decoder(fake), Var<T>::constant(text));
}

// Row-wise cosine similarity of two equally shaped matrices.
template <class T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b) {
  Var<T> na = ag::row_norm(a);
  Var<T> nb = ag::row_norm(b);
  if ((na.value().array() == T(0)).any() || (nb.value().array() == T(0)).any()) {
    throw ValidationError(ValidationError::Code::kPrecondition, "cosine of a zero-norm vector");
  }
  return ag::div(ag::sum_rows(ag::mul(a, b)), ag::mul(na, nb));
}

// (real row, synthesized row)
using PairIndex = std::pair<Eigen::Index, Eigen::Index>;

// Cosine embedding loss: mean(1 - cos) over matched pairs plus
// mean(max(0, cos - margin)) over unmatched pairs.
template <class T>
Var<T> embedding_loss(const Var<T>& real, const Var<T>& fake, std::span<const PairIndex> matched,
                      std::span<const PairIndex> unmatched, T margin) {
  require(!matched.empty() || !unmatched.empty(), "embedding_loss needs at least one pair");
  const auto side = [](std::span<const PairIndex> pairs, bool first) {
    std::vector<Eigen::Index> idx;
    for (const auto& p : pairs) idx.push_back(first ? p.first : p.second);
    return idx;
  };
  Var<T> total;
  if (!matched.empty()) {
    Var<T> cos = cosine_rows(ag::gather_rows(real, side(matched, true)), ag::gather_rows(fake, side(matched, false)));
    total = ag::mean_all(ag::add_scalar(ag::scale(cos, T(-1)), T(1)));
  }
  if (!unmatched.empty()) {
    Var<T> cos = cosine_rows(ag::gather_rows(real, side(unmatched, true)), ag::gather_rows(fake, side(unmatched, false)));
    Var<T> hinge = ag::mean_all(ag::relu(ag::add_scalar(cos, -margin)));
    total = total.defined() ? ag::add(total, hinge) : hinge;
  }
  return total;
}

// Matched: each real row with the synthesized row of the same index (same
// class by construction). Unmatched: each real row with one synthesized row
// of a different class, drawn uniformly.
inline void make_pairs(std::span<const ClassId> labels, Rng& rng, std::vector<PairIndex>& matched,
                       std::vector<PairIndex>& unmatched) {
  matched.clear();
  unmatched.clear();
  const auto n = static_cast<Eigen::Index>(labels.size());
  std::vector<Eigen::Index> others;
  for (Eigen::Index i = 0; i < n; ++i) {
    matched.emplace_back(i, i);
    others.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[j] != labels[i]) others.push_back(j);
    }
    if (!others.empty()) unmatched.emplace_back(i, others[rng.index(others.size())]);
  }
}

// ---------------------------------------------------------------------------
// Training

struct GeneratorEpoch {
  double critic_loss = 0.0;
  double wasserstein = 0.0;  // E[D(x)] - E[D(x~)]
  double gradient_penalty = 0.0;
  double generator_loss = 0.0;
  double reconstruction = 0.0;
  double embedding = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeneratorEpoch, critic_loss, wasserstein, gradient_penalty, generator_loss,
                                   reconstruction, embedding)

template <class T = float>
struct GeneratorTraining {
  GeneratorModel<T> model;
  std::vector<GeneratorEpoch> trace;
};

template <class T>
Matrix<T> noise_matrix(Eigen::Index rows, int dim, Rng& rng) {
  return nn::normal_matrix<T>(rows, dim, rng);
}

// Alternates `critic_steps_per_generator_step` critic updates (each on a
// fresh random minibatch) with one generator + decoder update. One epoch is
// ceil(n / batch_size) generator updates.
template <class T = float>
GeneratorTraining<T> train_generator(const DatasetBundle& bundle, const GeneratorConfig& config) {
  check_config(config);
  const FusedBatch real = fused_split(bundle, Split::kTrainSeen);
  require(real.size() > 0, "train_generator needs train_seen records");
  const FeatureMatrix text = embedding_matrix(bundle, real.labels);

  Rng init_rng(mix_seed(config.seed, 11));
  Rng rng(mix_seed(config.seed, 12));
  GeneratorTraining<T> out{GeneratorModel<T>(bundle.dims, config, init_rng), {}};
  auto& model = out.model;
  nn::AdamOptions adam{config.learning_rate, config.adam_beta1, config.adam_beta2, 1e-8};
  nn::Adam<T> critic_opt(model.critic_params(), adam);
  nn::Adam<T> gen_opt(model.generator_params(), adam);

  const Eigen::Index n = real.size();
  const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, n);
  const Eigen::Index steps = (n + batch - 1) / batch;
  const T lambda = static_cast<T>(config.lambda);
  std::int64_t step = 0;
  std::vector<PairIndex> matched;
  std::vector<PairIndex> unmatched;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    GeneratorEpoch acc;
    for (Eigen::Index it = 0; it < steps; ++it, ++step) {
      for (int c = 0; c < config.critic_steps_per_generator_step; ++c) {
        const auto idx = sample_without_replacement(n, batch, rng);
        Matrix<T> x = take_rows<T>(real.features, idx);
        Matrix<T> t = take_rows<T>(text, idx);
        Matrix<T> fake = model.generate(Var<T>::constant(noise_matrix<T>(batch, config.noise_dim, rng)),
                                        Var<T>::constant(t)).value();
        auto cb = make_critic_batch<T>(std::move(x), std::move(fake), std::move(t), rng);
        Var<T> penalty = gradient_penalty(model.critic, cb.interpolates, cb.condition, lambda);
        const Var<T> tv = Var<T>::constant(cb.condition);
        Var<T> real_score = ag::mean_all(model.score(Var<T>::constant(cb.real), tv));
        Var<T> fake_score = ag::mean_all(model.score(Var<T>::constant(cb.fake), tv));
        Var<T> loss = ag::add(ag::sub(fake_score, real_score), penalty);
        guard_loss(loss.scalar(), step, "critic loss");
        critic_opt.zero_grad();
        ag::backward(loss);
        critic_opt.step();
        if (c == config.critic_steps_per_generator_step - 1) {
          acc.critic_loss += loss.scalar();
          acc.wasserstein += real_score.scalar() - fake_score.scalar();
          acc.gradient_penalty += penalty.scalar();
        }
      }

      const auto idx = sample_without_replacement(n, batch, rng);
      Matrix<T> x = take_rows<T>(real.features, idx);
      Matrix<T> t = take_rows<T>(text, idx);
      std::vector<ClassId> labels;
      for (auto i : idx) labels.push_back(real.labels[static_cast<std::size_t>(i)]);
      const Var<T> tv = Var<T>::constant(t);
      Var<T> fake = model.generate(Var<T>::constant(noise_matrix<T>(batch, config.noise_dim, rng)), tv);
      Var<T> adversarial = ag::scale(ag::mean_all(model.score(fake, tv)), T(-1));
      Var<T> rec = reconstruction_loss(model.decoder, fake, t);
      make_pairs(labels, rng, matched, unmatched);
      Var<T> emb = embedding_loss<T>(Var<T>::constant(x), fake, matched, unmatched, static_cast<T>(config.margin));
      Var<T> loss = ag::add(adversarial, ag::add(ag::scale(rec, static_cast<T>(config.alpha)),
                                                 ag::scale(emb, static_cast<T>(config.beta))));
      guard_loss(loss.scalar(), step, "generator loss");
      gen_opt.zero_grad();
      ag::backward(loss);
      gen_opt.step();
      acc.generator_loss += loss.scalar();
      acc.reconstruction += rec.scalar();
      acc.embedding += emb.scalar();
    }
    const double inv = 1.0 / static_cast<double>(steps);
    for (double* f : {&acc.critic_loss, &acc.wasserstein, &acc.gradient_penalty, &acc.generator_loss,
                      &acc.reconstruction, &acc.embedding}) {
      *f *= inv;
    }
    out.trace.push_back(acc);
  }
  // Parameters feed later graphs; drop gradients left from the last step.
  critic_opt.zero_grad();
  gen_opt.zero_grad();
  return out;
}

// Draws `n_per_class` features per target class from G(z, t), z ~ N(0, I).
// Each class uses its own random stream keyed by (seed, class id), so the
// output for a class does not depend on the other targets.
template <class T>
FusedBatch synthesize(const GeneratorModel<T>& model, std::span<const ClassEmbedding> targets, int n_per_class,
                      std::uint64_t seed) {
  require(n_per_class >= 1, "n_per_class must be at least 1");
  FusedBatch out;
  out.origin = Origin::kSynthesized;
  out.features.resize(static_cast<Eigen::Index>(targets.size()) * n_per_class, model.dims.fused());
  Eigen::Index row = 0;
  for (const auto& target : targets) {
    require(static_cast<int>(target.text.size()) == model.dims.text, "target embedding dimension mismatch");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(target.id) + 1000));
    Matrix<T> t(n_per_class, model.dims.text);
    for (int i = 0; i < n_per_class; ++i) {
      for (int j = 0; j < model.dims.text; ++j) t(i, j) = static_cast<T>(target.text[j]);
    }
    Matrix<T> z = noise_matrix<T>(n_per_class, model.config.noise_dim, rng);
    Matrix<T> x = model.generate(Var<T>::constant(std::move(z)), Var<T>::constant(std::move(t))).value();
    out.features.middleRows(row, n_per_class) = x.template cast<float>();
    row += n_per_class;
    for (int i = 0; i < n_per_class; ++i) out.labels.push_back(target.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline json dims_json(const Dims& d) { return {{"d_a", d.audio}, {"d_v", d.visual}, {"d_t", d.text}}; }
inline Dims dims_from_json(const json& j) { return {j.at("d_a").get<int>(), j.at("d_v").get<int>(), j.at("d_t").get<int>()}; }

inline constexpr const char* kCheckpointKind = "generator";

template <class T>
void save(GeneratorModel<T>& model, const std::filesystem::path& dir) {
  json meta = {{"dims", dims_json(model.dims)}, {"config", model.config}, {"seed", model.config.seed}};
  save_checkpoint<T>(dir, kCheckpointKind, meta, const_params(model.params()));
}

template <class T = float>
GeneratorModel<T> load(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  const json& meta = manifest.at("meta");
  Rng rng(0);
  GeneratorModel<T> model(dims_from_json(meta.at("dims")), meta.at("config").get<GeneratorConfig>(), rng);
  load_checkpoint<T>(dir, kCheckpointKind, model.params());
  return model;
}

}  // namespace avood::generator
