// SPDX-License-Identifier: Apache-2.0
//
// End-to-end GZSL evaluation: a gate routes each test sample to the seen or
// the unseen classifier, and the routed predictions are scored with mean
// class accuracy. Also hosts the calibrated-stacking gate and the ablations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avood/data.hpp"
#include "avood/feature_generator.hpp"
#include "avood/metrics.hpp"
#include "avood/ood_detector.hpp"
#include "avood/seen_classifier.hpp"
#include "avood/unseen_classifier.hpp"

namespace avood::pipeline {

using ag::Matrix;
using ood::Decision;

// ---------------------------------------------------------------------------
// Test set and routing

// test_seen rows first, then test_unseen rows.
struct TestSet {
  FeatureMatrix features;
  std::vector<ClassId> labels;
  std::vector<bool> is_seen;
  std::set<ClassId> seen_classes;
  std::set<ClassId> unseen_classes;

  Eigen::Index size() const { return features.rows(); }
};

inline TestSet make_test_set(const FusedBatch& seen_part, const FusedBatch& unseen_part,
                             const std::set<ClassId>& seen_classes, const std::set<ClassId>& unseen_classes) {
  if (seen_part.size() == 0 || unseen_part.size() == 0) {
    throw ValidationError(ValidationError::Code::kBadSplit, "evaluation needs non-empty seen and unseen test splits");
  }
  TestSet t;
  t.features.resize(seen_part.size() + unseen_part.size(), seen_part.features.cols());
  t.features << seen_part.features, unseen_part.features;
  t.labels = seen_part.labels;
  t.labels.insert(t.labels.end(), unseen_part.labels.begin(), unseen_part.labels.end());
  t.is_seen.assign(static_cast<std::size_t>(seen_part.size()), true);
  t.is_seen.resize(t.labels.size(), false);
  t.seen_classes = seen_classes;
  t.unseen_classes = unseen_classes;
  return t;
}

inline TestSet make_test_set(const DatasetBundle& b) {
  return make_test_set(fused_split(b, Split::kTestSeen), fused_split(b, Split::kTestUnseen), b.seen_classes,
                       b.unseen_classes);
}

// What each classifier would answer for every test sample. The seen side
// only ever names seen classes and the unseen side only unseen classes.
struct SidePredictions {
  std::vector<ClassId> seen_side;
  std::vector<ClassId> unseen_side;
};

struct Routed {
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  std::vector<ClassId> predictions;
};

// Each sample takes the answer of exactly the classifier its decision picks.
inline Routed evaluate_routed(const TestSet& t, std::span<const Decision> decisions, const SidePredictions& sides) {
  const auto n = static_cast<std::size_t>(t.size());
  if (decisions.size() != n || sides.seen_side.size() != n || sides.unseen_side.size() != n) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "routing inputs disagree with the test set size");
  }
  Routed r;
  std::vector<ClassId> seen_pred, seen_truth, unseen_pred, unseen_truth;
  for (std::size_t i = 0; i < n; ++i) {
    const ClassId p = decisions[i] == Decision::kSeen ? sides.seen_side[i] : sides.unseen_side[i];
    r.predictions.push_back(p);
    (t.is_seen[i] ? seen_pred : unseen_pred).push_back(p);
    (t.is_seen[i] ? seen_truth : unseen_truth).push_back(t.labels[i]);
  }
  r.S = metrics::mean_class_accuracy(seen_pred, seen_truth, t.seen_classes);
  r.U = metrics::mean_class_accuracy(unseen_pred, unseen_truth, t.unseen_classes);
  r.HM = metrics::harmonic_mean(r.S, r.U);
  return r;
}

// Ground-truth routing.
inline std::vector<Decision> oracle_decisions(const TestSet& t) {
  std::vector<Decision> d;
  for (bool s : t.is_seen) d.push_back(s ? Decision::kSeen : Decision::kUnseen);
  return d;
}

// Accuracy of one side on its own split, without any gate.
inline double side_accuracy(const TestSet& t, const std::vector<ClassId>& side, bool seen) {
  std::vector<ClassId> pred, truth;
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (t.is_seen[i] != seen) continue;
    pred.push_back(side[i]);
    truth.push_back(t.labels[i]);
  }
  return metrics::mean_class_accuracy(pred, truth, seen ? t.seen_classes : t.unseen_classes);
}

// Seen-ness scores with a cut: SEEN iff score >= threshold.
struct GateOutput {
  std::vector<double> scores;
  double threshold = 0.0;

  std::vector<Decision> decisions() const {
    std::vector<Decision> d;
    for (double s : scores) d.push_back(ood::decide(s, threshold));
    return d;
  }
};

struct Evaluation {
  metrics::GZSLReport report;
  metrics::RocCurve roc;
  GateOutput gate;
  std::vector<ClassId> predictions;
};

// Generic GZSL evaluation from precomputed side predictions. ZSL and UC_acc
// both score the unseen side on test_unseen with unseen candidates only.
inline Evaluation evaluate_gzsl(const TestSet& t, const GateOutput& gate, const SidePredictions& sides) {
  Evaluation e;
  e.gate = gate;
  const auto decisions = gate.decisions();
  const Routed r = evaluate_routed(t, decisions, sides);
  e.predictions = r.predictions;
  e.report.S = r.S;
  e.report.U = r.U;
  e.report.HM = r.HM;
  e.report.SC_acc = side_accuracy(t, sides.seen_side, true);
  e.report.UC_acc = side_accuracy(t, sides.unseen_side, false);
  e.report.ZSL = e.report.UC_acc;
  e.roc = metrics::roc_curve(gate.scores, t.is_seen);
  e.report.AUC = metrics::auc(e.roc);
  e.report.FPR_at_TPR60 = metrics::fpr_at_tpr(e.roc, 0.60);
  return e;
}

// ---------------------------------------------------------------------------
// Classifier outputs

struct ModelOutputs {
  seen::SeenPrediction seen;
  Matrix<double> unseen_distances;  // columns follow `unseen_candidates.ids`
  unseen::Candidates unseen_candidates;
  std::vector<ClassId> unseen_labels;
};

inline std::vector<ClassId> nearest(const Matrix<double>& distances, const std::vector<ClassId>& ids) {
  std::vector<ClassId> out;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < distances.cols(); ++k) {
      if (distances(i, k) < distances(i, best)) best = k;
    }
    out.push_back(ids[static_cast<std::size_t>(best)]);
  }
  return out;
}

inline ModelOutputs model_outputs(const seen::SeenClassifierModel<float>& seen_model,
                                  const unseen::UnseenEmbeddingModel<float>& unseen_model, const DatasetBundle& bundle,
                                  const FeatureMatrix& x) {
  ModelOutputs o;
  o.seen = seen::classify_seen(seen_model, x);
  o.unseen_candidates = unseen::make_candidates(bundle, bundle.unseen_classes);
  o.unseen_distances = unseen::joint_distances(unseen_model, x, o.unseen_candidates);
  o.unseen_labels = nearest(o.unseen_distances, o.unseen_candidates.ids);
  return o;
}

// ---------------------------------------------------------------------------
// Calibrated stacking

// Similarity = 1 - min-max normalized distance, normalized over the whole batch.
inline Matrix<double> normalized_similarity(const Matrix<double>& distances) {
  if (distances.size() == 0) return distances;
  const double lo = distances.minCoeff();
  const double hi = distances.maxCoeff();
  if (hi <= lo) return Matrix<double>::Ones(distances.rows(), distances.cols());
  return ((hi - distances.array()) / (hi - lo)).matrix();
}

// max seen probability - max unseen similarity - gamma; SEEN iff >= 0.
inline double calibrated_stacking_score(std::span<const double> seen_probs, std::span<const double> unseen_similarity,
                                        double gamma) {
  require(!seen_probs.empty() && !unseen_similarity.empty(), "stacking needs both classifier outputs");
  return *std::max_element(seen_probs.begin(), seen_probs.end()) -
         *std::max_element(unseen_similarity.begin(), unseen_similarity.end()) - gamma;
}

// Scores at gamma = 0; sweeping the threshold is sweeping gamma.
inline std::vector<double> stacking_scores(const Matrix<double>& seen_probs, const Matrix<double>& unseen_distances) {
  const Matrix<double> sim = normalized_similarity(unseen_distances);
  std::vector<double> s;
  for (Eigen::Index i = 0; i < seen_probs.rows(); ++i) {
    const Eigen::RowVectorXd p = seen_probs.row(i);
    const Eigen::RowVectorXd q = sim.row(i);
    s.push_back(calibrated_stacking_score(std::span(p.data(), p.size()), std::span(q.data(), q.size()), 0.0));
  }
  return s;
}

inline constexpr const char* kStackingRule =
    "score = max seen probability - max unseen similarity - gamma; similarity = 1 - minmax(distance) over the batch";

struct GammaSelection {
  double gamma = 0.0;
  double hm = 0.0;
};

// Best-HM gamma over `points` values spanning the score range, on a labelled
// validation batch (seen rows then unseen rows). Ties keep the smallest gamma.
inline GammaSelection select_gamma(const TestSet& val, const ModelOutputs& outputs, int points = 200) {
  require(points >= 2, "gamma sweep needs at least two points");
  const auto scores = stacking_scores(outputs.seen.probabilities, outputs.unseen_distances);
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const SidePredictions sides{outputs.seen.labels, outputs.unseen_labels};
  GammaSelection best{*lo, -1.0};
  for (int k = 0; k < points; ++k) {
    const double g = *lo + (*hi - *lo) * k / (points - 1);
    const auto r = evaluate_routed(val, GateOutput{scores, g}.decisions(), sides);
    if (r.HM > best.hm) best = {g, r.HM};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gates

enum class GateKind { kOodEntropy, kOodBinary, kCalibratedStacking };

NLOHMANN_JSON_SERIALIZE_ENUM(GateKind, {{GateKind::kOodEntropy, "ood_entropy"},
                                        {GateKind::kOodBinary, "ood_binary"},
                                        {GateKind::kCalibratedStacking, "calibrated_stacking"}})

inline std::string gate_name(GateKind k) { return json(k).get<std::string>(); }

struct GatingMethod {
  GateKind kind = GateKind::kOodEntropy;
  std::shared_ptr<const ood::OodDetectorModel<float>> detector;  // OOD kinds
  std::optional<double> gamma;                                   // stacking

  static GatingMethod ood(std::shared_ptr<const ood::OodDetectorModel<float>> d) {
    require(d != nullptr, "OOD gate needs a detector");
    return {d->variant == ood::Variant::kEntropy ? GateKind::kOodEntropy : GateKind::kOodBinary, std::move(d), {}};
  }
  static GatingMethod stacking(double gamma) { return {GateKind::kCalibratedStacking, nullptr, gamma}; }

  void check() const {
    const bool is_ood = kind != GateKind::kCalibratedStacking;
    require(is_ood == (detector != nullptr) && is_ood != gamma.has_value(),
            "gate parameters do not match the gate kind");
    if (is_ood) {
      require((kind == GateKind::kOodEntropy) == (detector->variant == ood::Variant::kEntropy),
              "detector variant does not match the gate kind");
    }
  }
};

inline GateOutput gate_output(const GatingMethod& gate, const FeatureMatrix& x, const ModelOutputs& outputs) {
  gate.check();
  if (gate.kind == GateKind::kCalibratedStacking) {
    return {stacking_scores(outputs.seen.probabilities, outputs.unseen_distances), *gate.gamma};
  }
  return {ood::ood_score(*gate.detector, x), ood::seen_threshold(*gate.detector)};
}

// Full evaluation of one gate with the seen perceptron and the embedding
// unseen classifier.
inline Evaluation evaluate_gzsl(const GatingMethod& gate, const seen::SeenClassifierModel<float>& seen_model,
                                const unseen::UnseenEmbeddingModel<float>& unseen_model, const DatasetBundle& bundle) {
  const TestSet t = make_test_set(bundle);
  const ModelOutputs o = model_outputs(seen_model, unseen_model, bundle, t.features);
  return evaluate_gzsl(t, gate_output(gate, t.features, o), {o.seen.labels, o.unseen_labels});
}

// ---------------------------------------------------------------------------
// Training all stages

struct StageConfigs {
  generator::GeneratorConfig generator;
  ood::OodConfig ood;
  seen::SeenConfig seen;
  unseen::UnseenConfig unseen;
  int synth_count = 50;               // unseen features synthesized for detector training
  bool synth_count_is_total = false;  // false: per class
  int stacking_points = 200;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageConfigs, generator, ood, seen, unseen, synth_count,
                                                synth_count_is_total, stacking_points)

inline StageConfigs with_seed(StageConfigs c, std::uint64_t seed) {
  c.generator.seed = c.ood.seed = c.seen.seed = c.unseen.seed = seed;
  return c;
}

inline int synth_per_class(const StageConfigs& c, std::size_t n_classes) {
  require(c.synth_count >= 1 && n_classes >= 1, "synthesized count must be positive");
  if (!c.synth_count_is_total) return c.synth_count;
  return static_cast<int>((static_cast<std::size_t>(c.synth_count) + n_classes - 1) / n_classes);
}

inline std::vector<ClassEmbedding> class_embeddings(const DatasetBundle& b, const std::set<ClassId>& classes) {
  std::vector<ClassEmbedding> out;
  for (ClassId c : classes) out.push_back(b.embedding(c));
  return out;
}

inline FusedBatch synthesize_unseen(const generator::GeneratorModel<float>& g, const DatasetBundle& b,
                                    const StageConfigs& c, std::uint64_t stream) {
  const auto targets = class_embeddings(b, b.unseen_classes);
  return generator::synthesize(g, targets, synth_per_class(c, targets.size()), mix_seed(c.generator.seed, stream));
}

// Detector training set: synthesized unseen features from a dedicated stream.
inline FusedBatch detector_synthesis(const generator::GeneratorModel<float>& g, const DatasetBundle& b,
                                     const StageConfigs& c) {
  return synthesize_unseen(g, b, c, 51);
}

// Stand-in for the missing unseen half of the validation split.
inline FusedBatch validation_synthesis(const generator::GeneratorModel<float>& g, const DatasetBundle& b,
                                       const StageConfigs& c) {
  return synthesize_unseen(g, b, c, 52);
}

struct TrainedSuite {
  generator::GeneratorModel<float> generator;
  std::shared_ptr<ood::OodDetectorModel<float>> entropy_detector;
  std::shared_ptr<ood::OodDetectorModel<float>> binary_detector;  // null unless requested
  seen::SeenClassifierModel<float> seen;
  unseen::UnseenEmbeddingModel<float> unseen;
};

inline TrainedSuite train_suite(const DatasetBundle& b, const StageConfigs& c, bool with_binary) {
  TrainedSuite s;
  s.generator = generator::train_generator(b, c.generator).model;
  const FusedBatch real = fused_split(b, Split::kTrainSeen);
  const FusedBatch synth = detector_synthesis(s.generator, b, c);
  s.entropy_detector = std::make_shared<ood::OodDetectorModel<float>>(ood::train_entropy(real, synth, c.ood).model);
  if (with_binary) {
    s.binary_detector = std::make_shared<ood::OodDetectorModel<float>>(ood::train_binary(real, synth, c.ood).model);
  }
  s.seen = seen::train_seen(b, c.seen).model;
  s.unseen = unseen::train_unseen(b, c.unseen).model;
  return s;
}

// Gamma chosen on val_seen plus synthesized unseen validation features.
inline GammaSelection select_stacking_gamma(const TrainedSuite& s, const DatasetBundle& b, const StageConfigs& c) {
  const TestSet val =
      make_test_set(fused_split(b, Split::kVal), validation_synthesis(s.generator, b, c), b.seen_classes,
                    b.unseen_classes);
  return select_gamma(val, model_outputs(s.seen, s.unseen, b, val.features), c.stacking_points);
}

// ---------------------------------------------------------------------------
// Ablations

inline double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

struct BiasRow {
  GateKind method = GateKind::kOodEntropy;
  std::vector<double> auc, fpr, hm;  // per seed
  metrics::RocCurve roc;            // first seed
};

struct BiasAblation {
  std::vector<std::uint64_t> seeds;
  std::vector<BiasRow> rows;  // entropy, binary, stacking
  std::vector<double> gammas;
  std::vector<double> zsl;    // per seed, embedding classifier
};

inline void add_bias_seed(BiasAblation& a, const TrainedSuite& s, const DatasetBundle& b, const StageConfigs& c) {
  const TestSet t = make_test_set(b);
  const ModelOutputs o = model_outputs(s.seen, s.unseen, b, t.features);
  const SidePredictions sides{o.seen.labels, o.unseen_labels};
  const double gamma = select_stacking_gamma(s, b, c).gamma;
  a.gammas.push_back(gamma);
  const GatingMethod gates[] = {GatingMethod::ood(s.entropy_detector), GatingMethod::ood(s.binary_detector),
                                GatingMethod::stacking(gamma)};
  if (a.rows.empty()) {
    for (const auto& g : gates) a.rows.push_back({g.kind, {}, {}, {}, {}});
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const Evaluation e = evaluate_gzsl(t, gate_output(gates[k], t.features, o), sides);
    a.rows[k].auc.push_back(e.report.AUC);
    a.rows[k].fpr.push_back(e.report.FPR_at_TPR60);
    a.rows[k].hm.push_back(e.report.HM);
    if (a.rows[k].roc.points.empty()) a.rows[k].roc = e.roc;
    if (k == 0) a.zsl.push_back(e.report.ZSL);
  }
}

inline BiasAblation ablate_bias_methods(const DatasetBundle& b, const StageConfigs& c,
                                        const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "ablation needs at least one seed");
  BiasAblation a;
  a.seeds = seeds;
  for (auto seed : seeds) {
    const StageConfigs cs = with_seed(c, seed);
    add_bias_seed(a, train_suite(b, cs, true), b, cs);
  }
  return a;
}

struct ClassifierRow {
  std::string pairing;  // "<seen> & <unseen>"
  std::vector<double> sc_acc, uc_acc, hm;
};

struct ClassifierAblation {
  std::vector<std::uint64_t> seeds;
  std::vector<ClassifierRow> rows;
};

// Perceptron used as unseen classifier: trained on synthesized unseen features only.
inline seen::SeenClassifierModel<float> train_unseen_perceptron(const TrainedSuite& s, const DatasetBundle& b,
                                                                const StageConfigs& c) {
  return seen::train_seen_on(synthesize_unseen(s.generator, b, c, 53), c.seen).model;
}

inline void add_classifier_seed(ClassifierAblation& a, const TrainedSuite& s, const DatasetBundle& b,
                                const StageConfigs& c) {
  const TestSet t = make_test_set(b);
  const auto seen_mlp = seen::classify_seen(s.seen, t.features).labels;
  const auto unseen_mlp = seen::classify_seen(train_unseen_perceptron(s, b, c), t.features).labels;
  const auto seen_emb = unseen::classify_unseen(s.unseen, t.features, unseen::make_candidates(b, b.seen_classes));
  const auto unseen_emb = unseen::classify_unseen(s.unseen, t.features, unseen::make_candidates(b, b.unseen_classes));
  const GateOutput gate{ood::ood_score(*s.entropy_detector, t.features), ood::seen_threshold(*s.entropy_detector)};
  const std::pair<const char*, SidePredictions> pairings[] = {{"perceptron & perceptron", {seen_mlp, unseen_mlp}},
                                                              {"embedding & embedding", {seen_emb, unseen_emb}},
                                                              {"perceptron & embedding", {seen_mlp, unseen_emb}}};
  if (a.rows.empty()) {
    for (const auto& p : pairings) a.rows.push_back({p.first, {}, {}, {}});
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const Evaluation e = evaluate_gzsl(t, gate, pairings[k].second);
    a.rows[k].sc_acc.push_back(e.report.SC_acc);
    a.rows[k].uc_acc.push_back(e.report.UC_acc);
    a.rows[k].hm.push_back(e.report.HM);
  }
}

inline ClassifierAblation ablate_classifiers(const DatasetBundle& b, const StageConfigs& c,
                                             const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "ablation needs at least one seed");
  ClassifierAblation a;
  a.seeds = seeds;
  for (auto seed : seeds) {
    const StageConfigs cs = with_seed(c, seed);
    add_classifier_seed(a, train_suite(b, cs, false), b, cs);
  }
  return a;
}

struct NegativeLossRow {
  std::string mask;
  std::vector<double> uc_acc, hm, s;
};

struct NegativeLossAblation {
  std::vector<std::uint64_t> seeds;
  std::vector<NegativeLossRow> rows;
};

// The unseen classifier is retrained per mask; every other stage is reused.
// `masks` defaults to all five presets.
inline void add_negative_loss_seed(NegativeLossAblation& a, const TrainedSuite& s, const DatasetBundle& b,
                                   const StageConfigs& c, std::vector<std::string> masks = {}) {
  if (masks.empty()) masks = unseen::loss_mask_names();
  const TestSet t = make_test_set(b);
  const auto seen_mlp = seen::classify_seen(s.seen, t.features).labels;
  const GateOutput gate{ood::ood_score(*s.entropy_detector, t.features), ood::seen_threshold(*s.entropy_detector)};
  const auto candidates = unseen::make_candidates(b, b.unseen_classes);
  if (a.rows.empty()) {
    for (const auto& m : masks) a.rows.push_back({m, {}, {}, {}});
  }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    unseen::UnseenConfig uc = c.unseen;
    uc.loss_mask = masks[k];
    const bool reuse = uc == s.unseen.config;
    const auto model = reuse ? s.unseen : unseen::train_unseen(b, uc).model;
    const Evaluation e = evaluate_gzsl(t, gate, {seen_mlp, unseen::classify_unseen(model, t.features, candidates)});
    a.rows[k].uc_acc.push_back(e.report.UC_acc);
    a.rows[k].hm.push_back(e.report.HM);
    a.rows[k].s.push_back(e.report.S);
  }
}

inline NegativeLossAblation ablate_negative_losses(const DatasetBundle& b, const StageConfigs& c,
                                                   const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "ablation needs at least one seed");
  NegativeLossAblation a;
  a.seeds = seeds;
  for (auto seed : seeds) {
    const StageConfigs cs = with_seed(c, seed);
    add_negative_loss_seed(a, train_suite(b, cs, false), b, cs);
  }
  return a;
}

struct SweepPoint {
  double tau = 0.0;
  double hm = 0.0;
  double tpr = 0.0;  // seen test samples routed SEEN
  double fpr = 0.0;  // unseen test samples routed SEEN
  bool is_mean = false;
};

// `n_points - 1` evenly spaced thresholds over [0, ln K] plus the detector's
// mean-entropy threshold (flagged), sorted by tau.
inline std::vector<SweepPoint> threshold_sweep(const ood::OodDetectorModel<float>& detector,
                                               const seen::SeenClassifierModel<float>& seen_model,
                                               const unseen::UnseenEmbeddingModel<float>& unseen_model,
                                               const DatasetBundle& b, int n_points) {
  require(detector.variant == ood::Variant::kEntropy, "threshold sweep needs the entropy detector");
  require(n_points >= 3, "threshold sweep needs at least three points");
  const TestSet t = make_test_set(b);
  const auto h = ood::entropies(detector, t.features);
  const ModelOutputs o = model_outputs(seen_model, unseen_model, b, t.features);
  const SidePredictions sides{o.seen.labels, o.unseen_labels};
  const double max_tau = std::log(static_cast<double>(detector.num_seen()));

  std::vector<SweepPoint> pts;
  for (int k = 0; k < n_points - 1; ++k) pts.push_back({max_tau * k / (n_points - 2), 0, 0, 0, false});
  pts.push_back({detector.threshold, 0, 0, 0, true});
  std::stable_sort(pts.begin(), pts.end(), [](const auto& x, const auto& y) { return x.tau < y.tau; });

  const double n_seen = static_cast<double>(std::count(t.is_seen.begin(), t.is_seen.end(), true));
  const double n_unseen = static_cast<double>(t.is_seen.size()) - n_seen;
  for (auto& p : pts) {
    std::vector<Decision> d;
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      d.push_back(ood::decide(-h[i], -p.tau));
      if (d.back() == Decision::kSeen) (t.is_seen[i] ? tp : fp) += 1.0;
    }
    p.hm = evaluate_routed(t, d, sides).HM;
    p.tpr = tp / n_seen;
    p.fpr = fp / n_unseen;
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Serialization

inline json roc_json(const metrics::RocCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({p.fpr, p.tpr});
  return pts;
}

inline json to_json(const BiasAblation& a) {
  json rows = json::array();
  for (const auto& r : a.rows) {
    rows.push_back({{"method", r.method},
                    {"AUC", mean_of(r.auc)},
                    {"FPR_at_TPR60", mean_of(r.fpr)},
                    {"HM", mean_of(r.hm)},
                    {"per_seed", {{"AUC", r.auc}, {"FPR_at_TPR60", r.fpr}, {"HM", r.hm}}}});
  }
  return {{"table", "bias_reduction_methods"},
          {"seeds", a.seeds},
          {"rows", rows},
          {"stacking_gamma", a.gammas},
          {"stacking_rule", kStackingRule},
          {"ZSL", a.zsl}};
}

inline json to_json(const ClassifierAblation& a) {
  json rows = json::array();
  for (const auto& r : a.rows) {
    rows.push_back({{"pairing", r.pairing},
                    {"SC_acc", mean_of(r.sc_acc)},
                    {"UC_acc", mean_of(r.uc_acc)},
                    {"HM", mean_of(r.hm)},
                    {"per_seed", {{"SC_acc", r.sc_acc}, {"UC_acc", r.uc_acc}, {"HM", r.hm}}}});
  }
  return {{"table", "classifier_models"}, {"seeds", a.seeds}, {"gate", GateKind::kOodEntropy}, {"rows", rows}};
}

inline json to_json(const NegativeLossAblation& a) {
  json rows = json::array();
  for (const auto& r : a.rows) {
    rows.push_back({{"mask", r.mask},
                    {"UC_acc", mean_of(r.uc_acc)},
                    {"HM", mean_of(r.hm)},
                    {"per_seed", {{"UC_acc", r.uc_acc}, {"HM", r.hm}, {"S", r.s}}}});
  }
  return {{"table", "negative_loss_terms"}, {"seeds", a.seeds}, {"rows", rows}};
}

inline json to_json(const std::vector<SweepPoint>& pts) {
  json rows = json::array();
  for (const auto& p : pts) {
    rows.push_back({{"tau", p.tau}, {"HM", p.hm}, {"TPR", p.tpr}, {"FPR", p.fpr}, {"mean_threshold", p.is_mean}});
  }
  return {{"table", "entropy_threshold_sweep"}, {"rows", rows}};
}

}  // namespace avood::pipeline
