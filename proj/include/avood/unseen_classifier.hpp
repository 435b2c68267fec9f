// SPDX-License-Identifier: Apache-2.0
//
// Embedding-based zero-shot classifier.
//
//   audio  -> A_enc -\                    /-> A_proj -> A_dec -> A_rec
//                     cross-attention ---+
//   visual -> V_enc -/                    \-> V_proj -> V_dec -> V_rec
//   text   ----------------------------------> W_proj -> T_dec
//
// The audio-visual joint embedding is the mean of the projected attended
// audio and visual embeddings. A sample is labelled with the candidate class
// whose projected text embedding is nearest. Training runs the whole path
// for a positive sample and for a negative sample of a different class and
// combines triplet, reconstruction and regularization terms of both.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avood/autograd.hpp"
#include "avood/checkpoint.hpp"
#include "avood/data.hpp"
#include "avood/nn.hpp"
#include "avood/train_util.hpp"

namespace avood::unseen {

using ag::Matrix;
using ag::Var;

// Which of the six loss components contribute to training.
struct LossMask {
  bool trip_pos = true;
  bool rec_pos = true;
  bool reg_pos = true;
  bool trip_neg = true;
  bool rec_neg = true;
  bool reg_neg = true;

  friend bool operator==(const LossMask&, const LossMask&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossMask, trip_pos, rec_pos, reg_pos, trip_neg, rec_neg, reg_neg)

inline const std::vector<std::string>& loss_mask_names() {
  static const std::vector<std::string> names{"L+", "L+trip-", "L+rec-", "L+reg-", "full"};
  return names;
}

inline LossMask loss_mask_preset(const std::string& name) {
  LossMask m{true, true, true, false, false, false};
  if (name == "L+") return m;
  if (name == "L+trip-") return m.trip_neg = true, m;
  if (name == "L+rec-") return m.rec_neg = true, m;
  if (name == "L+reg-") return m.reg_neg = true, m;
  if (name == "full") return LossMask{};
  throw ValidationError(ValidationError::Code::kPrecondition, "unknown loss mask '" + name + "'");
}

struct UnseenConfig {
  int encoder_hidden = 512;
  int joint_dim = 64;
  int attention_depth = 1;
  double margin = 1.0;
  double dropout_encoder = 0.2;
  double dropout_projector = 0.1;
  double dropout_decoder = 0.2;
  double learning_rate = 5e-4;
  int epochs = 50;
  int batch_size = 64;
  std::string loss_mask = "full";
  std::uint64_t seed = 0;

  friend bool operator==(const UnseenConfig&, const UnseenConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UnseenConfig, encoder_hidden, joint_dim, attention_depth, margin,
                                                dropout_encoder, dropout_projector, dropout_decoder, learning_rate,
                                                epochs, batch_size, loss_mask, seed)

// One direction of single-head cross-attention: the query side attends over
// the key tokens, then residual + layer norm.
template <class T>
struct AttentionDirection {
  nn::Linear<T> query;
  nn::Linear<T> key;
  nn::Linear<T> value;
  nn::Linear<T> output;
  nn::LayerNorm<T> norm;

  AttentionDirection() = default;
  AttentionDirection(Eigen::Index dim, Rng& rng)
      : query(dim, dim, rng, false),
        key(dim, dim, rng, false),
        value(dim, dim, rng, false),
        output(dim, dim, rng, false),
        norm(dim) {}

  Var<T> operator()(const Var<T>& x, const std::vector<Var<T>>& tokens) const {
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(x.cols())));
    Var<T> q = query(x);
    Var<T> scores;
    std::vector<Var<T>> values;
    for (const auto& tok : tokens) {
      Var<T> s = ag::scale(ag::sum_rows(ag::mul(q, key(tok))), inv_sqrt_d);
      scores = scores.defined() ? ag::concat_cols(scores, s) : s;
      values.push_back(value(tok));
    }
    Var<T> weights = ag::softmax(scores);
    Var<T> mixed;
    for (std::size_t j = 0; j < values.size(); ++j) {
      Var<T> part = ag::mul_col(values[j], ag::slice_cols(weights, static_cast<Eigen::Index>(j), 1));
      mixed = mixed.defined() ? ag::add(mixed, part) : part;
    }
    return norm(ag::add(x, output(mixed)));
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
    norm.collect(prefix + ".norm", out);
  }
};

// Audio queries attend to the visual token and vice versa.
template <class T>
struct CrossAttentionBlock {
  AttentionDirection<T> audio_from_visual;
  AttentionDirection<T> visual_from_audio;

  CrossAttentionBlock() = default;
  CrossAttentionBlock(Eigen::Index dim, Rng& rng) : audio_from_visual(dim, rng), visual_from_audio(dim, rng) {}

  std::pair<Var<T>, Var<T>> operator()(const Var<T>& audio, const Var<T>& visual) const {
    return {audio_from_visual(audio, {visual}), visual_from_audio(visual, {audio})};
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    audio_from_visual.collect(prefix + ".a_from_v", out);
    visual_from_audio.collect(prefix + ".v_from_a", out);
  }
};

template <class T = float>
struct UnseenEmbeddingModel {
  nn::Mlp<T> audio_encoder;
  nn::Mlp<T> visual_encoder;
  std::vector<CrossAttentionBlock<T>> attention;
  nn::Linear<T> audio_projector;
  nn::Linear<T> visual_projector;
  nn::Linear<T> text_projector;
  nn::Linear<T> audio_decoder;
  nn::Linear<T> visual_decoder;
  nn::Linear<T> text_decoder;
  nn::Linear<T> audio_reconstructor;
  nn::Linear<T> visual_reconstructor;
  UnseenConfig config;
  Dims dims;

  UnseenEmbeddingModel() = default;
  UnseenEmbeddingModel(const Dims& d, const UnseenConfig& c, Rng& rng) : config(c), dims(d) {
    require(c.margin > 0.0, "triplet margin must be positive");
    require(c.attention_depth >= 0, "attention depth must be non-negative");
    const Eigen::Index t = d.text;
    audio_encoder = nn::Mlp<T>({d.audio, c.encoder_hidden, t}, nn::Activation::kRelu, rng, c.dropout_encoder);
    visual_encoder = nn::Mlp<T>({d.visual, c.encoder_hidden, t}, nn::Activation::kRelu, rng, c.dropout_encoder);
    for (int i = 0; i < c.attention_depth; ++i) attention.emplace_back(t, rng);
    audio_projector = nn::Linear<T>(t, c.joint_dim, rng);
    visual_projector = nn::Linear<T>(t, c.joint_dim, rng);
    text_projector = nn::Linear<T>(t, c.joint_dim, rng);
    audio_decoder = nn::Linear<T>(c.joint_dim, t, rng);
    visual_decoder = nn::Linear<T>(c.joint_dim, t, rng);
    text_decoder = nn::Linear<T>(c.joint_dim, t, rng);
    audio_reconstructor = nn::Linear<T>(t, t, rng);
    visual_reconstructor = nn::Linear<T>(t, t, rng);
  }

  nn::NamedParams<T> params() {
    nn::NamedParams<T> p;
    audio_encoder.collect("audio_encoder", p);
    visual_encoder.collect("visual_encoder", p);
    for (std::size_t i = 0; i < attention.size(); ++i) attention[i].collect("attention." + std::to_string(i), p);
    audio_projector.collect("audio_projector", p);
    visual_projector.collect("visual_projector", p);
    text_projector.collect("text_projector", p);
    audio_decoder.collect("audio_decoder", p);
    visual_decoder.collect("visual_decoder", p);
    text_decoder.collect("text_decoder", p);
    audio_reconstructor.collect("audio_reconstructor", p);
    visual_reconstructor.collect("visual_reconstructor", p);
    return p;
  }
};

template <class T>
std::pair<Var<T>, Var<T>> cross_attention(const UnseenEmbeddingModel<T>& m, Var<T> audio, Var<T> visual) {
  for (const auto& block : m.attention) std::tie(audio, visual) = block(audio, visual);
  return {audio, visual};
}

// Every intermediate output of one polarity.
template <class T>
struct Branch {
  Var<T> enc_a, enc_v;
  Var<T> att_a, att_v;
  Var<T> proj_a, proj_v, proj_av, proj_t;
  Var<T> dec_a, dec_v, dec_t;
  Var<T> rec_a, rec_v;
  Var<T> text;
};

template <class T>
struct EmbeddingForward {
  Branch<T> pos;
  Branch<T> neg;
};

// Joint-space embedding of fused audio-visual features (the O_av projection).
template <class T>
Var<T> embed_audio_visual(const UnseenEmbeddingModel<T>& m, const Var<T>& fused, Rng* dropout_rng,
                          Branch<T>* branch = nullptr) {
  Branch<T> local;
  Branch<T>& b = branch ? *branch : local;
  b.enc_a = m.audio_encoder(ag::slice_cols(fused, 0, m.dims.audio), dropout_rng);
  b.enc_v = m.visual_encoder(ag::slice_cols(fused, m.dims.audio, m.dims.visual), dropout_rng);
  std::tie(b.att_a, b.att_v) = cross_attention(m, b.enc_a, b.enc_v);
  const double p = m.config.dropout_projector;
  b.proj_a = m.audio_projector(nn::dropout(b.att_a, p, dropout_rng));
  b.proj_v = m.visual_projector(nn::dropout(b.att_v, p, dropout_rng));
  b.proj_av = ag::scale(ag::add(b.proj_a, b.proj_v), T(0.5));
  return b.proj_av;
}

template <class T>
Var<T> embed_text(const UnseenEmbeddingModel<T>& m, const Var<T>& text, Rng* dropout_rng) {
  return m.text_projector(nn::dropout(text, m.config.dropout_projector, dropout_rng));
}

template <class T>
Branch<T> run_branch(const UnseenEmbeddingModel<T>& m, const Var<T>& fused, const Var<T>& text, Rng* dropout_rng) {
  Branch<T> b;
  embed_audio_visual(m, fused, dropout_rng, &b);
  b.text = text;
  b.proj_t = embed_text(m, text, dropout_rng);
  const double p = m.config.dropout_decoder;
  b.dec_a = m.audio_decoder(nn::dropout(b.proj_a, p, dropout_rng));
  b.dec_v = m.visual_decoder(nn::dropout(b.proj_v, p, dropout_rng));
  b.dec_t = m.text_decoder(nn::dropout(b.proj_t, p, dropout_rng));
  b.rec_a = m.audio_reconstructor(b.dec_a);
  b.rec_v = m.visual_reconstructor(b.dec_v);
  return b;
}

// Positive and negative passes. Each negative row must come from a class
// different from its positive row.
template <class T>
EmbeddingForward<T> forward(const UnseenEmbeddingModel<T>& m, const Matrix<T>& fused_pos, const Matrix<T>& text_pos,
                            std::span<const ClassId> labels_pos, const Matrix<T>& fused_neg,
                            const Matrix<T>& text_neg, std::span<const ClassId> labels_neg, Rng* dropout_rng) {
  if (labels_pos.size() != labels_neg.size() || static_cast<Eigen::Index>(labels_pos.size()) != fused_pos.rows()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "positive and negative batches differ in size");
  }
  for (std::size_t i = 0; i < labels_pos.size(); ++i) {
    if (labels_pos[i] == labels_neg[i]) {
      throw ValidationError(ValidationError::Code::kPrecondition, "negative sample drawn from the anchor's class");
    }
  }
  EmbeddingForward<T> fw;
  fw.pos = run_branch(m, Var<T>::constant(fused_pos), Var<T>::constant(text_pos), dropout_rng);
  fw.neg = run_branch(m, Var<T>::constant(fused_neg), Var<T>::constant(text_neg), dropout_rng);
  return fw;
}

// ---------------------------------------------------------------------------
// Losses

// Row-wise max(||x - y|| - ||x - z|| + margin, 0).
template <class T>
Var<T> triplet_term(const Var<T>& anchor, const Var<T>& positive, const Var<T>& negative, T margin) {
  Var<T> d_pos = ag::row_norm(ag::sub(anchor, positive));
  Var<T> d_neg = ag::row_norm(ag::sub(anchor, negative));
  return ag::relu(ag::add_scalar(ag::sub(d_pos, d_neg), margin));
}

template <class T>
struct PolarityPair {
  Var<T> pos;
  Var<T> neg;
};

// Four triplets per polarity, averaged over the batch.
template <class T>
PolarityPair<T> triplet_loss(const EmbeddingForward<T>& fw, T margin) {
  const auto side = [margin](const Branch<T>& self, const Branch<T>& other) {
    Var<T> sum = triplet_term(self.proj_av, self.proj_t, other.proj_av, margin);
    sum = ag::add(sum, triplet_term(self.proj_t, self.proj_av, other.proj_t, margin));
    sum = ag::add(sum, triplet_term(self.proj_t, self.proj_av, other.proj_av, margin));
    sum = ag::add(sum, triplet_term(self.proj_av, self.proj_t, other.proj_t, margin));
    return ag::mean_all(sum);
  };
  return {side(fw.pos, fw.neg), side(fw.neg, fw.pos)};
}

// Sum over audio, visual and text decoders of MSE against the polarity's text embedding.
template <class T>
PolarityPair<T> reconstruction_loss_uc(const EmbeddingForward<T>& fw) {
  const auto side = [](const Branch<T>& b) {
    return ag::add(ag::add(ag::mse(b.dec_a, b.text), ag::mse(b.dec_v, b.text)), ag::mse(b.dec_t, b.text));
  };
  return {side(fw.pos), side(fw.neg)};
}

// Sum over audio and visual of MSE between reconstructor and encoder outputs.
template <class T>
PolarityPair<T> regularization_loss(const EmbeddingForward<T>& fw) {
  const auto side = [](const Branch<T>& b) { return ag::add(ag::mse(b.rec_a, b.enc_a), ag::mse(b.rec_v, b.enc_v)); };
  return {side(fw.pos), side(fw.neg)};
}

template <class T>
struct LossComponents {
  Var<T> trip_pos, trip_neg, rec_pos, rec_neg, reg_pos, reg_neg;
};

template <class T>
LossComponents<T> loss_components(const EmbeddingForward<T>& fw, T margin) {
  const auto trip = triplet_loss(fw, margin);
  const auto rec = reconstruction_loss_uc(fw);
  const auto reg = regularization_loss(fw);
  return {trip.pos, trip.neg, rec.pos, rec.neg, reg.pos, reg.neg};
}

// Sum of the components selected by `mask`.
template <class T>
Var<T> total_loss_uc(const LossComponents<T>& c, const LossMask& mask) {
  Var<T> total = Var<T>::constant(Matrix<T>::Zero(1, 1));
  const std::pair<bool, const Var<T>*> parts[] = {{mask.trip_pos, &c.trip_pos}, {mask.rec_pos, &c.rec_pos},
                                                  {mask.reg_pos, &c.reg_pos},   {mask.trip_neg, &c.trip_neg},
                                                  {mask.rec_neg, &c.rec_neg},   {mask.reg_neg, &c.reg_neg}};
  for (const auto& [on, v] : parts) {
    if (on) total = ag::add(total, *v);
  }
  return total;
}

template <class T>
Var<T> total_loss_uc(const EmbeddingForward<T>& fw, T margin, const LossMask& mask) {
  return total_loss_uc(loss_components(fw, margin), mask);
}

// ---------------------------------------------------------------------------
// Inference

struct Candidates {
  std::vector<ClassId> ids;  // ascending
  FeatureMatrix text;        // one row per id
};

inline Candidates make_candidates(const DatasetBundle& bundle, const std::set<ClassId>& classes) {
  Candidates c;
  c.ids.assign(classes.begin(), classes.end());
  c.text = embedding_matrix(bundle, c.ids);
  return c;
}

template <class T>
Matrix<double> joint_distances(const UnseenEmbeddingModel<T>& m, const FeatureMatrix& fused, const Candidates& cand) {
  if (fused.cols() != m.dims.fused()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "unseen classifier input dimension mismatch");
  }
  const Matrix<double> av = embed_audio_visual(m, Var<T>::constant(fused.cast<T>()), nullptr).value().template cast<double>();
  const Matrix<double> tp = embed_text(m, Var<T>::constant(cand.text.cast<T>()), nullptr).value().template cast<double>();
  Matrix<double> d(av.rows(), tp.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index k = 0; k < tp.rows(); ++k) d(i, k) = (av.row(i) - tp.row(k)).norm();
  }
  return d;
}

// Nearest projected text embedding; ties go to the lowest class id.
template <class T>
std::vector<ClassId> classify_unseen(const UnseenEmbeddingModel<T>& m, const FeatureMatrix& fused, const Candidates& cand) {
  require(!cand.ids.empty(), "classify_unseen needs at least one candidate");
  require(std::is_sorted(cand.ids.begin(), cand.ids.end()), "candidate ids must be ascending");
  const Matrix<double> d = joint_distances(m, fused, cand);
  std::vector<ClassId> out;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < d.cols(); ++k) {
      if (d(i, k) < d(i, best)) best = k;
    }
    out.push_back(cand.ids[static_cast<std::size_t>(best)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

// For every row, a uniformly drawn other class, then a uniformly drawn sample
// of that class.
inline std::vector<Eigen::Index> draw_negatives(std::span<const ClassId> labels, Rng& rng) {
  std::map<ClassId, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<Eigen::Index>(i));
  require(by_class.size() >= 2, "negative sampling needs at least two classes");
  std::vector<ClassId> classes;
  for (const auto& [c, rows] : by_class) classes.push_back(c);
  std::vector<Eigen::Index> out;
  out.reserve(labels.size());
  for (ClassId l : labels) {
    auto k = rng.index(classes.size() - 1);
    ClassId other = classes[k];
    if (other >= l) other = classes[k + 1];
    const auto& rows = by_class[other];
    out.push_back(rows[rng.index(rows.size())]);
  }
  return out;
}

template <class T = float>
struct UnseenTraining {
  UnseenEmbeddingModel<T> model;
  std::vector<double> trace;
};

template <class T = float>
UnseenTraining<T> train_unseen_on(const FusedBatch& data, const DatasetBundle& bundle, const UnseenConfig& c) {
  const LossMask mask = loss_mask_preset(c.loss_mask);
  const std::set<ClassId> classes(data.labels.begin(), data.labels.end());
  require(classes.size() >= 2, "unseen classifier training needs at least two seen classes");
  const FeatureMatrix text = embedding_matrix(bundle, data.labels);

  Rng init(mix_seed(c.seed, 41));
  Rng rng(mix_seed(c.seed, 42));
  UnseenTraining<T> out{UnseenEmbeddingModel<T>(bundle.dims, c, init), {}};
  nn::Adam<T> opt(out.model.params(), {c.learning_rate, 0.9, 0.999, 1e-8});
  const T margin = static_cast<T>(c.margin);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    const auto negatives = draw_negatives(data.labels, rng);
    auto order = iota_index(data.size());
    rng.shuffle(std::span(order));
    const auto batches = minibatches(order, std::max(1, c.batch_size));
    double total = 0.0;
    for (const auto& idx : batches) {
      std::vector<Eigen::Index> neg_idx;
      std::vector<ClassId> pos_labels;
      std::vector<ClassId> neg_labels;
      for (auto i : idx) {
        const auto j = negatives[static_cast<std::size_t>(i)];
        neg_idx.push_back(j);
        pos_labels.push_back(data.labels[static_cast<std::size_t>(i)]);
        neg_labels.push_back(data.labels[static_cast<std::size_t>(j)]);
      }
      const auto fw = forward<T>(out.model, take_rows<T>(data.features, idx), take_rows<T>(text, idx), pos_labels,
                                 take_rows<T>(data.features, neg_idx), take_rows<T>(text, neg_idx), neg_labels, &rng);
      Var<T> loss = total_loss_uc(fw, margin, mask);
      guard_loss(loss.scalar(), step++, "unseen classifier loss");
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
UnseenTraining<T> train_unseen(const DatasetBundle& bundle, const UnseenConfig& c) {
  return train_unseen_on<T>(fused_split(bundle, Split::kTrainSeen), bundle, c);
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr const char* kCheckpointKind = "unseen_classifier";

template <class T>
void save(UnseenEmbeddingModel<T>& m, const std::filesystem::path& dir) {
  json meta = {{"dims", {{"d_a", m.dims.audio}, {"d_v", m.dims.visual}, {"d_t", m.dims.text}}},
               {"config", m.config},
               {"seed", m.config.seed}};
  save_checkpoint<T>(dir, kCheckpointKind, meta, const_params(m.params()));
}

template <class T = float>
UnseenEmbeddingModel<T> load(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "manifest.json").at("meta");
  const auto& d = meta.at("dims");
  Rng rng(0);
  UnseenEmbeddingModel<T> m({d.at("d_a").get<int>(), d.at("d_v").get<int>(), d.at("d_t").get<int>()},
                            meta.at("config").get<UnseenConfig>(), rng);
  load_checkpoint<T>(dir, kCheckpointKind, m.params());
  return m;
}

}  // namespace avood::unseen
