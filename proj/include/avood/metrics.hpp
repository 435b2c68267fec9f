// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

#include "avood/data.hpp"
#include "avood/error.hpp"

namespace avood::metrics {

// Unweighted mean over classes of per-class accuracy. Classes of `class_set`
// without any test sample are left out of the average.
inline double mean_class_accuracy(std::span<const ClassId> predictions, std::span<const ClassId> truths,
                                  const std::set<ClassId>& class_set) {
  if (predictions.empty() || predictions.size() != truths.size()) {
    throw ValidationError(ValidationError::Code::kPrecondition, "mean_class_accuracy needs equal, non-empty inputs");
  }
  std::map<ClassId, std::pair<long, long>> tally;  // correct, total
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!class_set.count(truths[i])) {
      throw ValidationError(ValidationError::Code::kPrecondition,
                            "truth label " + std::to_string(truths[i]) + " outside the class set");
    }
    auto& [correct, total] = tally[truths[i]];
    correct += predictions[i] == truths[i];
    ++total;
  }
  if (tally.empty()) {
    throw ValidationError(ValidationError::Code::kPrecondition, "no class of the class set occurs in the truths");
  }
  double sum = 0.0;
  for (const auto& [c, ct] : tally) sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
  return sum / static_cast<double>(tally.size());
}

inline double harmonic_mean(double seen, double unseen) {
  const double total = seen + unseen;
  return total == 0.0 ? 0.0 : 2.0 * unseen * seen / total;
}

inline constexpr double kNormalizationTolerance = 1e-5;

// Natural-log entropy; 0 log 0 counts as 0.
inline double entropy(std::span<const double> p) {
  double total = 0.0;
  double h = 0.0;
  for (double pi : p) {
    if (!(pi >= -kNormalizationTolerance)) {
      throw ValidationError(ValidationError::Code::kPrecondition, "negative probability");
    }
    total += pi;
    if (pi > 0.0) h -= pi * std::log(pi);
  }
  if (std::abs(total - 1.0) > kNormalizationTolerance) {
    throw ValidationError(ValidationError::Code::kPrecondition, "probabilities do not sum to 1");
  }
  return h;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

// Seen samples are the positive, in-distribution side. A sample counts as
// predicted-seen at threshold t when its seen-ness score is >= t.
struct RocCurve {
  std::vector<RocPoint> points;
  bool positive_is_seen = true;
};

inline RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& is_seen) {
  if (scores.size() != is_seen.size()) {
    throw ValidationError(ValidationError::Code::kPrecondition, "roc_curve needs equal-length inputs");
  }
  const auto positives = std::count(is_seen.begin(), is_seen.end(), true);
  const auto negatives = static_cast<std::ptrdiff_t>(is_seen.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError(ValidationError::Code::kPrecondition, "roc_curve needs both seen and unseen samples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  long tp = 0;
  long fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    // Equal scores enter the same threshold step.
    while (i < order.size() && scores[order[i]] == threshold) {
      (is_seen[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                            static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return curve;
}

inline double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

// Smallest FPR reaching `target_tpr`, interpolating linearly between the two
// curve points that bracket the target.
inline double fpr_at_tpr(const RocCurve& curve, double target_tpr = 0.60) {
  const auto& pts = curve.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].tpr < target_tpr) continue;
    if (pts[i].tpr == target_tpr || i == 0) return pts[i].fpr;
    const auto& a = pts[i - 1];
    const auto& b = pts[i];
    return a.fpr + (target_tpr - a.tpr) / (b.tpr - a.tpr) * (b.fpr - a.fpr);
  }
  return 1.0;
}

// One GZSL evaluation. Accuracies are fractions in [0, 1].
struct GZSLReport {
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  double ZSL = 0.0;
  double AUC = 0.0;
  double FPR_at_TPR60 = 0.0;
  double SC_acc = 0.0;
  double UC_acc = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GZSLReport, S, U, HM, ZSL, AUC, FPR_at_TPR60, SC_acc, UC_acc)

}  // namespace avood::metrics
