// SPDX-License-Identifier: Apache-2.0
//
// The `avood` command line.
//
//   avood gen-data                  synthetic benchmark -> <out>/dataset
//   avood train <stage>             generator | ood | seen | unseen -> <out>/checkpoints/<stage>
//   avood evaluate                  GZSL report + ROC data from the four checkpoints
//   avood ablate <which>            bias | classifiers | neg-loss | threshold-sweep
//   avood plot <csv> [--output F]   SVG from ROC or threshold-sweep data
//
// Common flags: --config PATH, --preset NAME, --seed N, --out DIR.
// Exit codes: 0 success, 2 usage or validation error, 3 missing prerequisite
// stage, 4 numerical divergence. Errors go to stderr as one JSON object.
#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avood/config.hpp"
#include "avood/pipeline.hpp"
#include "avood/plot.hpp"

namespace avood::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDependency = 3;
inline constexpr int kExitDivergence = 4;

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generator", "ood", "seen", "unseen"};
  return names;
}

struct CommonOptions {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Layout {
  fs::path root;
  fs::path checkpoint(const std::string& stage) const { return root / "checkpoints" / stage; }
  fs::path trace(const std::string& stage) const { return root / "traces" / (stage + ".csv"); }
  fs::path dataset() const { return root / "dataset"; }
};

inline bool has_checkpoint(const Layout& l, const std::string& stage) {
  return fs::exists(l.checkpoint(stage) / "manifest.json");
}

inline void require_stage(const Layout& l, const std::string& stage, const std::string& needed_by) {
  if (!has_checkpoint(l, stage)) {
    throw DependencyError(stage, needed_by + " requires the '" + stage + "' checkpoint at " +
                                     l.checkpoint(stage).string() + "; run `avood train " + stage + "` first");
  }
}

inline ExperimentConfig resolve(const CommonOptions& o) {
  const json overlay = o.config.empty() ? json::object() : read_json(o.config);
  ExperimentConfig c = resolve_config(overlay, o.preset);
  if (!o.out.empty()) c.out = o.out;
  if (o.seed) c.seeds = {*o.seed};
  return c;
}

// Effective config next to the outputs; wall-clock time only in the sidecar log.
inline void record_run(const ExperimentConfig& c, const std::string& command) {
  const fs::path root = c.out;
  fs::create_directories(root);
  write_json(root / "config.effective.json", json(c));
  std::ofstream log(root / "run.log", std::ios::app);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  log << stamp << ' ' << command << '\n';
}

inline std::string loss_csv_value(double v) { return plot::fmt(v); }

inline void write_trace(const fs::path& path, const std::vector<double>& trace) {
  plot::Table t{{"epoch", "loss"}, {}};
  for (std::size_t e = 0; e < trace.size(); ++e) t.rows.push_back({std::to_string(e + 1), loss_csv_value(trace[e])});
  plot::write_csv(path, t);
}

inline void write_generator_trace(const fs::path& path, const std::vector<generator::GeneratorEpoch>& trace) {
  plot::Table t{{"epoch", "critic_loss", "wasserstein", "gradient_penalty", "generator_loss", "reconstruction",
                 "embedding"},
                {}};
  for (std::size_t e = 0; e < trace.size(); ++e) {
    const auto& r = trace[e];
    t.rows.push_back({std::to_string(e + 1), plot::fmt(r.critic_loss), plot::fmt(r.wasserstein),
                      plot::fmt(r.gradient_penalty), plot::fmt(r.generator_loss), plot::fmt(r.reconstruction),
                      plot::fmt(r.embedding)});
  }
  plot::write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Commands

inline json cmd_gen_data(ExperimentConfig c, const CommonOptions& o) {
  if (o.seed) c.synthetic.seed = *o.seed;
  check_spec(c.synthetic);
  record_run(c, "gen-data");
  const Layout l{c.out};
  const fs::path manifest = save_dataset(make_synthetic_benchmark(c.synthetic), l.dataset());
  return {{"dataset", manifest.string()}};
}

inline json cmd_train(const ExperimentConfig& c, const std::string& stage) {
  const Layout l{c.out};
  if (stage == "ood") require_stage(l, "generator", "train ood");
  const DatasetBundle b = load_experiment_dataset(c);
  const pipeline::StageConfigs s = pipeline::with_seed(c.stages, c.seeds.front());
  record_run(c, "train " + stage);
  const fs::path dir = l.checkpoint(stage);
  if (stage == "generator") {
    auto t = generator::train_generator(b, s.generator);
    generator::save(t.model, dir);
    write_generator_trace(l.trace(stage), t.trace);
  } else if (stage == "ood") {
    const auto g = generator::load(l.checkpoint("generator"));
    const FusedBatch real = fused_split(b, Split::kTrainSeen);
    const FusedBatch synth = pipeline::detector_synthesis(g, b, s);
    auto t = c.gate == pipeline::GateKind::kOodBinary ? ood::train_binary(real, synth, s.ood)
                                                     : ood::train_entropy(real, synth, s.ood);
    ood::save(t.model, dir);
    write_trace(l.trace(stage), t.trace);
  } else if (stage == "seen") {
    auto t = seen::train_seen(b, s.seen);
    seen::save(t.model, dir);
    write_trace(l.trace(stage), t.trace);
  } else if (stage == "unseen") {
    auto t = unseen::train_unseen(b, s.unseen);
    unseen::save(t.model, dir);
    write_trace(l.trace(stage), t.trace);
  } else {
    throw ValidationError(ValidationError::Code::kPrecondition, "unknown stage '" + stage + "'");
  }
  return {{"stage", stage}, {"checkpoint", dir.string()}, {"trace", l.trace(stage).string()}};
}

inline pipeline::TrainedSuite load_suite(const Layout& l) {
  for (const auto& stage : stage_names()) require_stage(l, stage, "evaluate");
  pipeline::TrainedSuite s;
  s.generator = generator::load(l.checkpoint("generator"));
  auto detector = std::make_shared<ood::OodDetectorModel<float>>(ood::load(l.checkpoint("ood")));
  (detector->variant == ood::Variant::kEntropy ? s.entropy_detector : s.binary_detector) = detector;
  s.seen = seen::load(l.checkpoint("seen"));
  s.unseen = unseen::load(l.checkpoint("unseen"));
  return s;
}

inline json cmd_evaluate(const ExperimentConfig& c) {
  const Layout l{c.out};
  const pipeline::TrainedSuite s = load_suite(l);
  const DatasetBundle b = load_experiment_dataset(c);
  const pipeline::StageConfigs stages = pipeline::with_seed(c.stages, c.seeds.front());
  record_run(c, "evaluate");

  pipeline::GatingMethod gate;
  json extra = json::object();
  if (c.gate == pipeline::GateKind::kCalibratedStacking) {
    const auto sel = pipeline::select_stacking_gamma(s, b, stages);
    gate = pipeline::GatingMethod::stacking(sel.gamma);
    extra = {{"gamma", sel.gamma}, {"validation_HM", sel.hm}, {"stacking_rule", pipeline::kStackingRule}};
  } else {
    const auto& d = c.gate == pipeline::GateKind::kOodEntropy ? s.entropy_detector : s.binary_detector;
    if (!d) {
      throw ValidationError(ValidationError::Code::kPrecondition,
                            "the ood checkpoint does not hold the detector variant of gate '" +
                                pipeline::gate_name(c.gate) + "'; retrain the ood stage with this gate");
    }
    gate = pipeline::GatingMethod::ood(d);
    extra = {{"threshold", d->threshold}};
  }
  const pipeline::Evaluation e = pipeline::evaluate_gzsl(gate, s.seen, s.unseen, b);
  json report = e.report;
  report["gate"] = c.gate;
  report["gate_parameters"] = extra;
  report["seed"] = c.seeds.front();
  report["synth_count"] = c.stages.synth_count;
  report["synth_count_is_total"] = c.stages.synth_count_is_total;
  write_json(l.root / "report.json", report);
  plot::write_csv(l.root / "roc.csv", plot::roc_table({{pipeline::gate_name(c.gate), e.roc}}));
  return {{"report", (l.root / "report.json").string()}, {"roc", (l.root / "roc.csv").string()}, {"metrics", e.report}};
}

inline std::string cell(double v) { return plot::fmt(v); }

inline json cmd_ablate(const ExperimentConfig& c, const std::string& which) {
  const Layout l{c.out};
  const DatasetBundle b = load_experiment_dataset(c);
  record_run(c, "ablate " + which);
  json result;
  std::vector<std::string> files;
  const auto emit = [&](const std::string& stem, const json& j, const plot::Table& table) {
    write_json(l.root / (stem + ".json"), j);
    plot::write_csv(l.root / (stem + ".csv"), table);
    files.push_back((l.root / (stem + ".json")).string());
    files.push_back((l.root / (stem + ".csv")).string());
    result = j;
  };
  if (which == "bias") {
    const auto a = pipeline::ablate_bias_methods(b, c.stages, c.seeds);
    plot::Table t{{"method", "AUC", "FPR_at_TPR60", "HM"}, {}};
    std::vector<plot::RocSeries> rocs;
    for (const auto& r : a.rows) {
      t.rows.push_back({pipeline::gate_name(r.method), cell(pipeline::mean_of(r.auc)), cell(pipeline::mean_of(r.fpr)),
                        cell(pipeline::mean_of(r.hm))});
      rocs.push_back({pipeline::gate_name(r.method), r.roc});
    }
    emit("ablate_bias", pipeline::to_json(a), t);
    plot::write_csv(l.root / "roc_bias.csv", plot::roc_table(rocs));
    files.push_back((l.root / "roc_bias.csv").string());
  } else if (which == "classifiers") {
    const auto a = pipeline::ablate_classifiers(b, c.stages, c.seeds);
    plot::Table t{{"pairing", "SC_acc", "UC_acc", "HM"}, {}};
    for (const auto& r : a.rows) {
      t.rows.push_back({r.pairing, cell(pipeline::mean_of(r.sc_acc)), cell(pipeline::mean_of(r.uc_acc)),
                        cell(pipeline::mean_of(r.hm))});
    }
    emit("ablate_classifiers", pipeline::to_json(a), t);
  } else if (which == "neg-loss") {
    const auto a = pipeline::ablate_negative_losses(b, c.stages, c.seeds);
    plot::Table t{{"mask", "UC_acc", "HM"}, {}};
    for (const auto& r : a.rows) t.rows.push_back({r.mask, cell(pipeline::mean_of(r.uc_acc)), cell(pipeline::mean_of(r.hm))});
    emit("ablate_neg_loss", pipeline::to_json(a), t);
  } else if (which == "threshold-sweep") {
    const auto stages = pipeline::with_seed(c.stages, c.seeds.front());
    const auto s = pipeline::train_suite(b, stages, false);
    const auto pts = pipeline::threshold_sweep(*s.entropy_detector, s.seen, s.unseen, b, c.sweep_points);
    json j = pipeline::to_json(pts);
    j["seed"] = c.seeds.front();
    emit("threshold_sweep", j, plot::sweep_table(pts));
  } else {
    throw ValidationError(ValidationError::Code::kPrecondition, "unknown ablation '" + which + "'");
  }
  return {{"ablation", which}, {"files", files}};
}

inline json cmd_plot(const fs::path& input, fs::path output) {
  if (output.empty()) output = fs::path(input).replace_extension(".svg");
  const std::string svg = plot::render_csv(input);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  std::ofstream out(output, std::ios::binary);
  if (!out) throw IoError("cannot write " + output.string());
  out << svg;
  return {{"plot", output.string()}};
}

// ---------------------------------------------------------------------------
// Entry point

inline json error_json(const char* kind, const std::string& message, int code) {
  return {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual GZSL with an out-of-distribution gate", "avood"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::uint64_t seed = 0;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON config merged over the preset");
    sub->add_option("--preset", opts.preset, "Named preset")->check(CLI::IsMember(preset_names()));
    sub->add_option("--seed", seed, "Seed (gen-data: benchmark seed; otherwise training seed)");
    sub->add_option("--out", opts.out, "Output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic benchmark");
  add_common(gen);
  std::string stage;
  auto* train = app.add_subcommand("train", "Train one stage");
  train->add_option("stage", stage, "generator | ood | seen | unseen")->required()->check(CLI::IsMember(stage_names()));
  add_common(train);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate the trained pipeline");
  add_common(evaluate);
  std::string which;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation");
  ablate->add_option("which", which, "bias | classifiers | neg-loss | threshold-sweep")
      ->required()
      ->check(CLI::IsMember({"bias", "classifiers", "neg-loss", "threshold-sweep"}));
  add_common(ablate);
  std::string plot_input, plot_output;
  auto* plot_cmd = app.add_subcommand("plot", "Render plot data as SVG");
  plot_cmd->add_option("input", plot_input, "CSV from evaluate or ablate")->required();
  plot_cmd->add_option("--output", plot_output, "SVG path (default: input with .svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what(), kExitUsage).dump() << '\n';
    return kExitUsage;
  }

  try {
    for (auto* sub : {gen, train, evaluate, ablate}) {
      if (sub->parsed() && sub->count("--seed")) opts.seed = seed;
    }
    json result;
    if (plot_cmd->parsed()) {
      result = cmd_plot(plot_input, plot_output);
    } else {
      const ExperimentConfig c = resolve(opts);
      if (gen->parsed()) result = cmd_gen_data(c, opts);
      if (train->parsed()) result = cmd_train(c, stage);
      if (evaluate->parsed()) result = cmd_evaluate(c);
      if (ablate->parsed()) result = cmd_ablate(c, which);
    }
    out << result.dump(2) << '\n';
    return kExitOk;
  } catch (const DependencyError& e) {
    json j = error_json(e.kind(), e.what(), kExitDependency);
    j["error"]["missing_stage"] = e.missing_stage();
    err << j.dump() << '\n';
    return kExitDependency;
  } catch (const DivergenceError& e) {
    json j = error_json(e.kind(), e.what(), kExitDivergence);
    j["error"]["step"] = e.step();
    err << j.dump() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    err << error_json(e.kind(), e.what(), kExitUsage).dump() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << error_json("malformed", e.what(), kExitUsage).dump() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what(), 1).dump() << '\n';
    return 1;
  }
}

}  // namespace avood::cli
