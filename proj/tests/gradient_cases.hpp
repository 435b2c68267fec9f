// SPDX-License-Identifier: Apache-2.0
//
// Small double-precision networks paired with one loss each, for checking
// analytic gradients against central differences.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "avood/feature_generator.hpp"
#include "avood/ood_detector.hpp"
#include "avood/seen_classifier.hpp"
#include "avood/unseen_classifier.hpp"
#include "support.hpp"

namespace avood::testing {

struct GradientCase {
  std::shared_ptr<void> owner;  // keeps the model alive for `params`
  nn::NamedParams<double> params;
  std::function<Var<double>()> loss;
};

struct GradientCaseSpec {
  std::string name;
  std::function<GradientCase(std::uint64_t seed)> make;
};

inline constexpr int kGradientPoints = 20;
inline constexpr double kGradientTolerance = 1e-4;

namespace detail {

template <class M>
GradientCase own(std::shared_ptr<M> m, nn::NamedParams<double> params, std::function<Var<double>()> loss) {
  return {std::move(m), std::move(params), std::move(loss)};
}

inline std::shared_ptr<generator::GeneratorModel<double>> tiny_generator(Rng& rng) {
  generator::GeneratorConfig c;
  c.noise_dim = 2;
  c.hidden = 3;
  c.decoder_hidden = 3;
  // generator [4 -> 3 -> 3 -> 3], critic [5 -> 3 -> 3 -> 1], decoder [3 -> 3 -> 2]
  return std::make_shared<generator::GeneratorModel<double>>(Dims{2, 1, 2}, c, rng);
}

inline std::shared_ptr<nn::Mlp<double>> tiny_mlp(std::vector<Eigen::Index> dims, nn::Activation act, Rng& rng) {
  return std::make_shared<nn::Mlp<double>>(std::move(dims), act, rng);
}

// d_a = d_v = d_t = 2, encoder hidden 2, joint 1: 97 parameters.
inline std::shared_ptr<unseen::UnseenEmbeddingModel<double>> tiny_unseen(Rng& rng) {
  unseen::UnseenConfig c;
  c.encoder_hidden = 2;
  c.joint_dim = 1;
  c.dropout_encoder = 0.2;
  c.dropout_projector = 0.1;
  c.dropout_decoder = 0.2;
  auto m = std::make_shared<unseen::UnseenEmbeddingModel<double>>(Dims{2, 2, 2}, c, rng);
  // Random attention weights and norms so that no path is trivially linear.
  for (auto& [name, p] : m->params()) p->mutable_value() = random_matrix(p->value().rows(), p->value().cols(), rng, 0.8);
  return m;
}

struct UnseenInputs {
  Matrix<double> fused_pos, text_pos, fused_neg, text_neg;
  std::vector<ClassId> labels_pos, labels_neg;
};

inline UnseenInputs unseen_inputs(Rng& rng, int rows = 4) {
  UnseenInputs in{random_matrix(rows, 4, rng), random_matrix(rows, 2, rng), random_matrix(rows, 4, rng),
                  random_matrix(rows, 2, rng), {}, {}};
  for (int i = 0; i < rows; ++i) {
    in.labels_pos.push_back(i % 2);
    in.labels_neg.push_back(1 - i % 2);
  }
  return in;
}

// One unseen-classifier component, evaluated with fixed dropout masks.
inline GradientCaseSpec unseen_component(const std::string& name,
                                         std::function<Var<double>(const unseen::LossComponents<double>&)> pick) {
  return {name, [pick](std::uint64_t seed) {
            Rng rng(seed);
            auto m = tiny_unseen(rng);
            const auto in = unseen_inputs(rng);
            const std::uint64_t mask_seed = rng.bits();
            auto loss = [m, in, pick, mask_seed] {
              Rng dropout_rng(mask_seed);
              const auto fw = unseen::forward<double>(*m, in.fused_pos, in.text_pos, in.labels_pos, in.fused_neg,
                                                      in.text_neg, in.labels_neg, &dropout_rng);
              return pick(unseen::loss_components(fw, m->config.margin));
            };
            return own(m, m->params(), loss);
          }};
}

}  // namespace detail

inline std::vector<GradientCaseSpec> gradient_cases() {
  using namespace detail;
  std::vector<GradientCaseSpec> cases;

  cases.push_back({"wgan_gradient_penalty", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto g = tiny_generator(rng);
                     const Matrix<double> interp = random_matrix(6, 3, rng), text = random_matrix(6, 2, rng);
                     return own(g, g->critic_params(),
                                [g, interp, text] { return generator::gradient_penalty(g->critic, interp, text, 10.0); });
                   }});

  cases.push_back({"wgan_critic_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto g = tiny_generator(rng);
                     Matrix<double> real = random_matrix(6, 3, rng);
                     Matrix<double> fake = random_matrix(6, 3, rng);
                     Matrix<double> text = random_matrix(6, 2, rng);
                     auto batch = generator::make_critic_batch<double>(real, fake, text, rng);
                     return own(g, g->critic_params(),
                                [g, batch] { return generator::critic_loss(g->critic, batch, 10.0); });
                   }});

  cases.push_back({"generator_reconstruction", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto g = tiny_generator(rng);
                     const Matrix<double> z = random_matrix(5, 2, rng), t = random_matrix(5, 2, rng);
                     return own(g, g->generator_params(), [g, z, t] {
                       Var<double> fake = g->generate(Var<double>::constant(z), Var<double>::constant(t));
                       return generator::reconstruction_loss(g->decoder, fake, t);
                     });
                   }});

  cases.push_back({"generator_embedding", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto g = tiny_generator(rng);
                     const Matrix<double> z = random_matrix(6, 2, rng), t = random_matrix(6, 2, rng);
                     const Matrix<double> real = random_matrix(6, 3, rng);
                     const std::vector<ClassId> labels{0, 1, 2, 0, 1, 2};
                     std::vector<generator::PairIndex> matched, unmatched;
                     generator::make_pairs(labels, rng, matched, unmatched);
                     return own(g, g->generator_params(), [g, z, t, real, matched, unmatched] {
                       Var<double> fake = g->generate(Var<double>::constant(z), Var<double>::constant(t));
                       return generator::embedding_loss<double>(Var<double>::constant(real), fake, matched, unmatched, 0.0);
                     });
                   }});

  cases.push_back({"ood_binary", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto net = tiny_mlp({3, 5, 4, 1}, nn::Activation::kRelu, rng);
                     nn::NamedParams<double> p;
                     net->collect("network", p);
                     const Matrix<double> real = random_matrix(5, 3, rng), synth = random_matrix(5, 3, rng);
                     return own(net, p, [net, real, synth] {
                       return ood::binary_loss((*net)(Var<double>::constant(real)), (*net)(Var<double>::constant(synth)));
                     });
                   }});

  cases.push_back({"ood_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto net = tiny_mlp({3, 5, 4, 3}, nn::Activation::kRelu, rng);
                     nn::NamedParams<double> p;
                     net->collect("network", p);
                     const Matrix<double> real = random_matrix(5, 3, rng), synth = random_matrix(5, 3, rng);
                     return own(net, p, [net, real, synth] {
                       return ood::entropy_loss((*net)(Var<double>::constant(real)), (*net)(Var<double>::constant(synth)));
                     });
                   }});

  cases.push_back({"ood_cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto net = tiny_mlp({3, 5, 4, 3}, nn::Activation::kRelu, rng);
                     nn::NamedParams<double> p;
                     net->collect("network", p);
                     const Matrix<double> real = random_matrix(6, 3, rng);
                     const std::vector<int> targets{0, 1, 2, 2, 1, 0};
                     return own(net, p, [net, real, targets] {
                       return ag::cross_entropy((*net)(Var<double>::constant(real)), targets);
                     });
                   }});

  cases.push_back({"ood_total", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto net = tiny_mlp({3, 5, 4, 3}, nn::Activation::kRelu, rng);
                     nn::NamedParams<double> p;
                     net->collect("network", p);
                     const Matrix<double> real = random_matrix(6, 3, rng), synth = random_matrix(6, 3, rng);
                     const std::vector<int> targets{2, 1, 0, 0, 1, 2};
                     return own(net, p, [net, real, synth, targets] {
                       return ood::ood_loss((*net)(Var<double>::constant(real)), (*net)(Var<double>::constant(synth)),
                                            targets);
                     });
                   }});

  cases.push_back({"seen_cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     seen::SeenConfig c;
                     c.hidden1 = 4;
                     c.hidden2 = 4;
                     auto m = std::make_shared<seen::SeenClassifierModel<double>>(
                         seen::make_seen_classifier<double>(3, {10, 11, 12}, c, rng));
                     const Matrix<double> x = random_matrix(6, 3, rng);
                     const std::vector<int> targets{0, 0, 1, 2, 2, 1};
                     return own(m, m->params(),
                                [m, x, targets] { return ag::cross_entropy(m->network(Var<double>::constant(x)), targets); });
                   }});

  cases.push_back({"cross_attention_block", [](std::uint64_t seed) {
                     Rng rng(seed);
                     auto block = std::make_shared<unseen::CrossAttentionBlock<double>>(3, rng);
                     nn::NamedParams<double> p;
                     block->collect("attention", p);
                     for (auto& [name, q] : p) q->mutable_value() = random_matrix(q->value().rows(), q->value().cols(), rng);
                     const Matrix<double> a = random_matrix(4, 3, rng), v = random_matrix(4, 3, rng);
                     const Matrix<double> w = random_matrix(4, 6, rng);
                     return own(block, p, [block, a, v, w] {
                       auto [att_a, att_v] = (*block)(Var<double>::constant(a), Var<double>::constant(v));
                       return ag::sum_all(ag::mul(ag::concat_cols(att_a, att_v), Var<double>::constant(w)));
                     });
                   }});

  using LC = unseen::LossComponents<double>;
  cases.push_back(unseen_component("unseen_triplet_pos", [](const LC& c) { return c.trip_pos; }));
  cases.push_back(unseen_component("unseen_triplet_neg", [](const LC& c) { return c.trip_neg; }));
  cases.push_back(unseen_component("unseen_reconstruction_pos", [](const LC& c) { return c.rec_pos; }));
  cases.push_back(unseen_component("unseen_reconstruction_neg", [](const LC& c) { return c.rec_neg; }));
  cases.push_back(unseen_component("unseen_regularization_pos", [](const LC& c) { return c.reg_pos; }));
  cases.push_back(unseen_component("unseen_regularization_neg", [](const LC& c) { return c.reg_neg; }));
  cases.push_back(unseen_component("unseen_total", [](const LC& c) {
    return unseen::total_loss_uc(c, unseen::loss_mask_preset("full"));
  }));
  return cases;
}

}  // namespace avood::testing
