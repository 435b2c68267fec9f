// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. A config file is a JSON object that is merged
// over a named preset, so any field may be omitted:
//
//   {
//     "preset": "synthetic",              // vggsound | ucf | activitynet | synthetic
//     "dataset": "",                      // manifest.json path or directory; empty = synthetic
//     "synthetic": { ...SyntheticSpec },
//     "stages": { "generator": {...}, "ood": {...}, "seen": {...}, "unseen": {...},
//                 "synth_count": 50, "synth_count_is_total": false, "stacking_points": 200 },
//     "gate": "ood_entropy",              // ood_entropy | ood_binary | calibrated_stacking
//     "loss_mask": "full",                // L+ | L+trip- | L+rec- | L+reg- | full
//     "seeds": [1, 2, 3, 4, 5],
//     "sweep_points": 200,
//     "out": "runs/default"
//   }
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "avood/checkpoint.hpp"
#include "avood/data.hpp"
#include "avood/pipeline.hpp"

namespace avood {

struct ExperimentConfig {
  std::string preset = "synthetic";
  std::string dataset;
  SyntheticSpec synthetic;
  pipeline::StageConfigs stages;
  pipeline::GateKind gate = pipeline::GateKind::kOodEntropy;
  std::string loss_mask = "full";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int sweep_points = 200;
  std::string out = "runs/default";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, preset, dataset, synthetic, stages, gate, loss_mask,
                                                seeds, sweep_points, out)

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"vggsound", "ucf", "activitynet", "synthetic"};
  return names;
}

namespace detail {

struct PublishedSettings {
  int synth_count;
  double ood_lr;
  int ood_batch;
  double seen_lr;
  int seen_batch;
  double unseen_lr;
  int unseen_batch;
  double drop_enc, drop_proj, drop_dec;
};

inline ExperimentConfig published(const std::string& name, const PublishedSettings& p) {
  ExperimentConfig c;
  c.preset = name;
  auto& s = c.stages;
  s.synth_count = p.synth_count;
  s.generator.epochs = 5;
  s.generator.learning_rate = 1e-4;
  s.ood.epochs = 80;
  s.ood.learning_rate = p.ood_lr;
  s.ood.batch_size = p.ood_batch;
  s.seen.epochs = 200;
  s.seen.learning_rate = p.seen_lr;
  s.seen.batch_size = p.seen_batch;
  s.unseen.epochs = 50;
  s.unseen.learning_rate = p.unseen_lr;
  s.unseen.batch_size = p.unseen_batch;
  s.unseen.dropout_encoder = p.drop_enc;
  s.unseen.dropout_projector = p.drop_proj;
  s.unseen.dropout_decoder = p.drop_dec;
  return c;
}

}  // namespace detail

inline ExperimentConfig preset_config(const std::string& name) {
  if (name == "vggsound") return detail::published(name, {50, 0.001, 6900, 0.008, 1024, 0.0005, 256, 0.3, 0.1, 0.2});
  if (name == "ucf") return detail::published(name, {50, 0.009, 16, 0.0006, 32, 0.0024, 112, 0.5, 0.4, 0.4});
  if (name == "activitynet") {
    return detail::published(name, {1000, 0.005, 64, 0.008, 128, 0.0005, 256, 0.2, 0.3, 0.2});
  }
  if (name == "synthetic") {
    ExperimentConfig c;
    auto& s = c.stages;
    s.generator.epochs = 40;
    s.ood.epochs = 80;
    s.ood.learning_rate = 1e-3;
    s.ood.batch_size = 64;
    s.seen.epochs = 100;
    s.seen.learning_rate = 1e-3;
    s.seen.batch_size = 64;
    s.unseen.epochs = 100;
    s.unseen.learning_rate = 5e-4;
    s.unseen.batch_size = 64;
    return c;
  }
  throw ValidationError(ValidationError::Code::kPrecondition, "unknown preset '" + name + "'");
}

inline void check(const ExperimentConfig& c) {
  require(!c.seeds.empty(), "seed list must not be empty");
  require(c.sweep_points >= 3, "sweep_points must be at least 3");
  unseen::loss_mask_preset(c.loss_mask);
  generator::check_config(c.stages.generator);
  if (c.dataset.empty()) check_spec(c.synthetic);
}

namespace detail {

// Every key of `given` must exist in `known` (the serialized, fully defaulted config).
inline void check_known_keys(const json& given, const json& known, const std::string& path) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) {
      throw ValidationError(ValidationError::Code::kMalformed, "unknown config key '" + where + "'");
    }
    check_known_keys(value, known.at(key), where);
  }
}

}  // namespace detail

// `overlay` is merged over the preset it names (or `preset_override`).
inline ExperimentConfig resolve_config(const json& overlay, const std::string& preset_override = "") {
  if (!overlay.is_object()) throw ValidationError(ValidationError::Code::kMalformed, "config must be a JSON object");
  std::string name = preset_override;
  if (name.empty()) name = overlay.value("preset", std::string("synthetic"));
  json merged = preset_config(name);
  merged.merge_patch(overlay);
  merged["preset"] = name;
  ExperimentConfig c;
  try {
    c = merged.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(ValidationError::Code::kMalformed, std::string("invalid config: ") + e.what());
  }
  detail::check_known_keys(overlay, json(c), "");
  c.stages.unseen.loss_mask = c.loss_mask;
  check(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::string& preset_override = "") {
  return resolve_config(read_json(path), preset_override);
}

inline DatasetBundle load_experiment_dataset(const ExperimentConfig& c) {
  if (c.dataset.empty()) return make_synthetic_benchmark(c.synthetic);
  std::filesystem::path p = c.dataset;
  if (std::filesystem::is_directory(p)) p /= "manifest.json";
  return load_dataset(p);
}

}  // namespace avood
