// SPDX-License-Identifier: Apache-2.0
//
// Dataset container, audio/visual fusion, on-disk format and the synthetic
// benchmark generator.
//
// On disk a dataset is a directory holding `manifest.json` and five flat
// little-endian arrays: audio.bin and visual.bin (f32, row-major, one row per
// record), labels.bin (i32), splits.bin (u8, see `Split`) and
// text_embeddings.bin (f32, one row per class in class-table order).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avood/autograd.hpp"
#include "avood/binary_io.hpp"
#include "avood/checkpoint.hpp"
#include "avood/error.hpp"
#include "avood/rng.hpp"

namespace avood {

using ClassId = std::int32_t;
using FeatureMatrix = ag::Matrix<float>;

enum class Split : std::uint8_t { kTrainSeen = 0, kVal = 1, kTestSeen = 2, kTestUnseen = 3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrainSeen: return "train_seen";
    case Split::kVal: return "val";
    case Split::kTestSeen: return "test_seen";
    case Split::kTestUnseen: return "test_unseen";
  }
  return "?";
}

struct Dims {
  int audio = 0;
  int visual = 0;
  int text = 0;

  int fused() const { return audio + visual; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct FeatureRecord {
  std::vector<float> audio;
  std::vector<float> visual;
  ClassId label = 0;
  Split split = Split::kTrainSeen;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct ClassEmbedding {
  ClassId id = 0;
  std::string name;
  std::vector<float> text;

  friend bool operator==(const ClassEmbedding&, const ClassEmbedding&) = default;
};

enum class Origin : std::uint8_t { kReal, kSynthesized };

struct FusedFeature {
  std::vector<float> vector;
  Origin origin = Origin::kReal;
  ClassId label = 0;
};

// A batch of fused features stored row-wise, the form every model consumes.
struct FusedBatch {
  FeatureMatrix features;
  std::vector<ClassId> labels;
  Origin origin = Origin::kReal;

  Eigen::Index size() const { return features.rows(); }
};

struct DatasetBundle {
  std::vector<FeatureRecord> records;
  std::vector<ClassEmbedding> class_embeddings;  // ordered by class id
  std::set<ClassId> seen_classes;
  std::set<ClassId> unseen_classes;
  Dims dims;

  const ClassEmbedding& embedding(ClassId id) const {
    auto it = std::lower_bound(class_embeddings.begin(), class_embeddings.end(), id,
                               [](const ClassEmbedding& e, ClassId v) { return e.id < v; });
    if (it == class_embeddings.end() || it->id != id) {
      throw ValidationError(ValidationError::Code::kMissingEmbedding, "no embedding for class " + std::to_string(id));
    }
    return *it;
  }

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

// ---------------------------------------------------------------------------
// Fusion

inline std::vector<float> fuse_concat(std::span<const float> audio, std::span<const float> visual, const Dims& dims) {
  if (static_cast<int>(audio.size()) != dims.audio || static_cast<int>(visual.size()) != dims.visual) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch,
                          "fuse_concat: got (" + std::to_string(audio.size()) + ", " + std::to_string(visual.size()) +
                              "), manifest declares (" + std::to_string(dims.audio) + ", " +
                              std::to_string(dims.visual) + ")");
  }
  std::vector<float> out;
  out.reserve(audio.size() + visual.size());
  out.insert(out.end(), audio.begin(), audio.end());
  out.insert(out.end(), visual.begin(), visual.end());
  return out;
}

inline FusedFeature fuse(const FeatureRecord& r, const Dims& dims) {
  return {fuse_concat(r.audio, r.visual, dims), Origin::kReal, r.label};
}

inline FusedBatch fused_split(const DatasetBundle& bundle, Split split) {
  FusedBatch batch;
  std::size_t n = 0;
  for (const auto& r : bundle.records) n += r.split == split;
  batch.features.resize(static_cast<Eigen::Index>(n), bundle.dims.fused());
  Eigen::Index row = 0;
  for (const auto& r : bundle.records) {
    if (r.split != split) continue;
    const auto fused = fuse_concat(r.audio, r.visual, bundle.dims);
    batch.features.row(row++) = Eigen::Map<const Eigen::RowVectorXf>(fused.data(), bundle.dims.fused());
    batch.labels.push_back(r.label);
  }
  return batch;
}

inline FusedBatch to_batch(std::span<const FusedFeature> features) {
  FusedBatch batch;
  if (features.empty()) return batch;
  const auto dim = static_cast<Eigen::Index>(features.front().vector.size());
  batch.features.resize(static_cast<Eigen::Index>(features.size()), dim);
  batch.origin = features.front().origin;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (static_cast<Eigen::Index>(features[i].vector.size()) != dim) {
      throw ValidationError(ValidationError::Code::kDimensionMismatch, "fused features differ in dimension");
    }
    batch.features.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXf>(features[i].vector.data(), dim);
    batch.labels.push_back(features[i].label);
  }
  return batch;
}

inline std::vector<FusedFeature> to_features(const FusedBatch& batch) {
  std::vector<FusedFeature> out;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const auto row = batch.features.row(i);
    out.push_back({std::vector<float>(row.data(), row.data() + row.size()), batch.origin,
                   batch.labels[static_cast<std::size_t>(i)]});
  }
  return out;
}

// Text embeddings of `classes`, one row each, in the given order.
inline FeatureMatrix embedding_matrix(const DatasetBundle& bundle, std::span<const ClassId> classes) {
  FeatureMatrix m(static_cast<Eigen::Index>(classes.size()), bundle.dims.text);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& e = bundle.embedding(classes[i]).text;
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(e.data(), bundle.dims.text);
  }
  return m;
}

inline std::vector<ClassId> sorted_classes(const std::set<ClassId>& s) { return {s.begin(), s.end()}; }

// ---------------------------------------------------------------------------
// Validation

inline void validate(const DatasetBundle& b) {
  using Code = ValidationError::Code;
  if (b.dims.audio < 1 || b.dims.visual < 1 || b.dims.text < 1) {
    throw ValidationError(Code::kDimensionMismatch, "feature dimensions must be positive");
  }
  for (ClassId c : b.seen_classes) {
    if (b.unseen_classes.count(c)) {
      throw ValidationError(Code::kOverlappingClasses, "class " + std::to_string(c) + " is both seen and unseen");
    }
  }
  std::set<ClassId> with_embedding;
  for (const auto& e : b.class_embeddings) {
    if (!with_embedding.insert(e.id).second) {
      throw ValidationError(Code::kMalformed, "duplicate embedding for class " + std::to_string(e.id));
    }
    if (static_cast<int>(e.text.size()) != b.dims.text) {
      throw ValidationError(Code::kDimensionMismatch, "text embedding of class " + std::to_string(e.id) +
                                                          " has dimension " + std::to_string(e.text.size()));
    }
    bool nonzero = false;
    for (float x : e.text) {
      if (!std::isfinite(x)) throw ValidationError(Code::kNonFinite, "non-finite text embedding");
      nonzero = nonzero || x != 0.0f;
    }
    if (!nonzero) throw ValidationError(Code::kMalformed, "zero text embedding for class " + std::to_string(e.id));
    if (!b.seen_classes.count(e.id) && !b.unseen_classes.count(e.id)) {
      throw ValidationError(Code::kMalformed, "embedding for class " + std::to_string(e.id) +
                                                  " which is neither seen nor unseen");
    }
  }
  if (!std::is_sorted(b.class_embeddings.begin(), b.class_embeddings.end(),
                      [](const auto& x, const auto& y) { return x.id < y.id; })) {
    throw ValidationError(Code::kMalformed, "class embeddings must be ordered by id");
  }
  for (ClassId c : b.seen_classes) {
    if (!with_embedding.count(c)) throw ValidationError(Code::kMissingEmbedding, "class " + std::to_string(c) + " has no embedding");
  }
  for (ClassId c : b.unseen_classes) {
    if (!with_embedding.count(c)) throw ValidationError(Code::kMissingEmbedding, "class " + std::to_string(c) + " has no embedding");
  }
  for (const auto& r : b.records) {
    if (static_cast<int>(r.audio.size()) != b.dims.audio || static_cast<int>(r.visual.size()) != b.dims.visual) {
      throw ValidationError(Code::kDimensionMismatch, "record dimension differs from manifest");
    }
    for (float x : r.audio) {
      if (!std::isfinite(x)) throw ValidationError(Code::kNonFinite, "non-finite audio feature");
    }
    for (float x : r.visual) {
      if (!std::isfinite(x)) throw ValidationError(Code::kNonFinite, "non-finite visual feature");
    }
    if (!with_embedding.count(r.label)) {
      throw ValidationError(Code::kMissingEmbedding, "label " + std::to_string(r.label) + " has no embedding");
    }
    const bool seen = b.seen_classes.count(r.label) > 0;
    const bool unseen = b.unseen_classes.count(r.label) > 0;
    if (r.split == Split::kTestUnseen ? !unseen : !seen) {
      throw ValidationError(Code::kBadSplit, "label " + std::to_string(r.label) + " not allowed in split " +
                                                 split_name(r.split));
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr const char* kDatasetFormat = "avood-dataset";

inline std::filesystem::path save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  validate(bundle);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::vector<float> audio;
  std::vector<float> visual;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> splits;
  std::map<std::string, std::size_t> counts{{"train_seen", 0}, {"val", 0}, {"test_seen", 0}, {"test_unseen", 0}};
  for (const auto& r : bundle.records) {
    audio.insert(audio.end(), r.audio.begin(), r.audio.end());
    visual.insert(visual.end(), r.visual.begin(), r.visual.end());
    labels.push_back(r.label);
    splits.push_back(static_cast<std::uint8_t>(r.split));
    ++counts[split_name(r.split)];
  }
  std::vector<float> text;
  json classes = json::array();
  for (const auto& e : bundle.class_embeddings) {
    text.insert(text.end(), e.text.begin(), e.text.end());
    classes.push_back({{"id", e.id}, {"name", e.name}, {"seen", bundle.seen_classes.count(e.id) > 0}});
  }

  io::write_le<float>(dir / "audio.bin", audio);
  io::write_le<float>(dir / "visual.bin", visual);
  io::write_le<std::int32_t>(dir / "labels.bin", labels);
  io::write_le<std::uint8_t>(dir / "splits.bin", splits);
  io::write_le<float>(dir / "text_embeddings.bin", text);

  json manifest = {
      {"format", kDatasetFormat},
      {"version", 1},
      {"dtype", "f32-le"},
      {"d_a", bundle.dims.audio},
      {"d_v", bundle.dims.visual},
      {"d_t", bundle.dims.text},
      {"num_records", bundle.records.size()},
      {"split_counts", counts},
      {"split_codes", {{"train_seen", 0}, {"val", 1}, {"test_seen", 2}, {"test_unseen", 3}}},
      {"classes", classes},
      {"files",
       {{"audio", "audio.bin"},
        {"visual", "visual.bin"},
        {"labels", "labels.bin"},
        {"splits", "splits.bin"},
        {"text_embeddings", "text_embeddings.bin"}}},
  };
  const auto path = dir / "manifest.json";
  write_json(path, manifest);
  return path;
}

inline DatasetBundle load_dataset(const std::filesystem::path& manifest_path) {
  using Code = ValidationError::Code;
  const json m = read_json(manifest_path);
  const auto dir = manifest_path.parent_path();
  DatasetBundle b;
  std::size_t n = 0;
  json files;
  try {
    if (m.at("format").get<std::string>() != kDatasetFormat) throw ValidationError(Code::kMalformed, "not a dataset manifest");
    if (m.at("dtype").get<std::string>() != "f32-le") throw ValidationError(Code::kMalformed, "unsupported dtype");
    b.dims = {m.at("d_a").get<int>(), m.at("d_v").get<int>(), m.at("d_t").get<int>()};
    n = m.at("num_records").get<std::size_t>();
    files = m.at("files");
    std::map<ClassId, bool> flag_by_id;
    std::map<std::string, bool> flag_by_name;
    for (const auto& c : m.at("classes")) {
      const auto id = c.at("id").get<ClassId>();
      const auto name = c.at("name").get<std::string>();
      const bool seen = c.at("seen").get<bool>();
      auto id_it = flag_by_id.find(id);
      auto name_it = flag_by_name.find(name);
      if ((id_it != flag_by_id.end() && id_it->second != seen) || (name_it != flag_by_name.end() && name_it->second != seen)) {
        throw ValidationError(Code::kOverlappingClasses, "class '" + name + "' listed as both seen and unseen");
      }
      if (id_it != flag_by_id.end() || name_it != flag_by_name.end()) {
        throw ValidationError(Code::kMalformed, "class '" + name + "' listed twice");
      }
      flag_by_id[id] = seen;
      flag_by_name[name] = seen;
      (seen ? b.seen_classes : b.unseen_classes).insert(id);
      b.class_embeddings.push_back({id, name, {}});
    }
  } catch (const json::exception& e) {
    throw ValidationError(Code::kMalformed, manifest_path.string() + ": " + e.what());
  }
  if (b.dims.audio < 1 || b.dims.visual < 1 || b.dims.text < 1) {
    throw ValidationError(Code::kDimensionMismatch, "feature dimensions must be positive");
  }
  std::sort(b.class_embeddings.begin(), b.class_embeddings.end(), [](const auto& x, const auto& y) { return x.id < y.id; });

  const auto file = [&](const char* key) { return dir / files.at(key).get<std::string>(); };
  const auto audio = io::read_le<float>(file("audio"), n * static_cast<std::size_t>(b.dims.audio));
  const auto visual = io::read_le<float>(file("visual"), n * static_cast<std::size_t>(b.dims.visual));
  const auto labels = io::read_le<std::int32_t>(file("labels"), n);
  const auto splits = io::read_le<std::uint8_t>(file("splits"), n);
  const auto text = io::read_le<float>(file("text_embeddings"), b.class_embeddings.size() * static_cast<std::size_t>(b.dims.text));

  // Class table order in the file is the manifest order; embeddings were
  // written in that order too.
  std::vector<ClassId> file_order;
  for (const auto& c : m.at("classes")) file_order.push_back(c.at("id").get<ClassId>());
  for (std::size_t k = 0; k < file_order.size(); ++k) {
    auto& e = *std::find_if(b.class_embeddings.begin(), b.class_embeddings.end(),
                            [&](const auto& x) { return x.id == file_order[k]; });
    e.text.assign(text.begin() + static_cast<std::ptrdiff_t>(k * b.dims.text),
                  text.begin() + static_cast<std::ptrdiff_t>((k + 1) * b.dims.text));
  }

  std::map<std::string, std::size_t> counts;
  b.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (splits[i] > 3) throw ValidationError(Code::kBadSplit, "unknown split code " + std::to_string(splits[i]));
    FeatureRecord r;
    r.audio.assign(audio.begin() + static_cast<std::ptrdiff_t>(i * b.dims.audio),
                   audio.begin() + static_cast<std::ptrdiff_t>((i + 1) * b.dims.audio));
    r.visual.assign(visual.begin() + static_cast<std::ptrdiff_t>(i * b.dims.visual),
                    visual.begin() + static_cast<std::ptrdiff_t>((i + 1) * b.dims.visual));
    r.label = labels[i];
    r.split = static_cast<Split>(splits[i]);
    ++counts[split_name(r.split)];
    b.records.push_back(std::move(r));
  }
  if (m.contains("split_counts")) {
    for (const auto& [name, count] : m.at("split_counts").items()) {
      if (counts[name] != count.get<std::size_t>()) {
        throw ValidationError(Code::kShapeMismatch, "split '" + name + "' count differs from manifest");
      }
    }
  }
  validate(b);
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticSpec {
  int n_seen_classes = 8;
  int n_unseen_classes = 4;
  int d_a = 16;
  int d_v = 16;
  int d_t = 12;
  int samples_per_class = 60;
  double cluster_spread = 0.3;
  std::uint64_t seed = 7;
  int latent_dim = 3;  // rank of the space the class means span
  double text_noise = 0.05;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticSpec, n_seen_classes, n_unseen_classes, d_a, d_v, d_t,
                                                samples_per_class, cluster_spread, seed, latent_dim, text_noise)

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

// 70/10/20 rule with rounding; the test split absorbs the remainder.
inline SplitCounts seen_split_counts(int samples_per_class) {
  SplitCounts c;
  c.train = static_cast<int>(std::lround(0.7 * samples_per_class));
  c.val = std::min(static_cast<int>(std::lround(0.1 * samples_per_class)), samples_per_class - c.train);
  c.test = samples_per_class - c.train - c.val;
  return c;
}

inline void check_spec(const SyntheticSpec& s) {
  require(s.n_seen_classes >= 1 && s.n_unseen_classes >= 1, "synthetic benchmark needs at least one seen and one unseen class");
  require(s.d_a >= 1 && s.d_v >= 1 && s.d_t >= 1, "synthetic benchmark dimensions must be positive");
  require(s.samples_per_class >= 1, "samples_per_class must be at least 1");
  require(s.cluster_spread > 0.0, "cluster_spread must be positive");
  require(s.latent_dim >= 1, "latent_dim must be at least 1");
  require(s.text_noise >= 0.0, "text_noise must be non-negative");
}

// Class means (one fused row per class, seen classes first) and text
// embeddings, drawn from a stream independent of the per-sample noise.
struct SyntheticClasses {
  ag::Matrix<double> means;
  ag::Matrix<double> text;
};

inline SyntheticClasses synthetic_classes(const SyntheticSpec& s) {
  check_spec(s);
  Rng rng(mix_seed(s.seed, 1));
  const int fused = s.d_a + s.d_v;
  const int n_classes = s.n_seen_classes + s.n_unseen_classes;
  ag::Matrix<double> mixing(s.latent_dim, fused);
  for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing.data()[i] = rng.normal() / std::sqrt(double(s.latent_dim));
  ag::Matrix<double> projection(fused, s.d_t);
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = rng.normal() / std::sqrt(double(fused));

  SyntheticClasses out{ag::Matrix<double>(n_classes, fused), ag::Matrix<double>(n_classes, s.d_t)};
  for (int k = 0; k < n_classes; ++k) {
    ag::Matrix<double> z(1, s.latent_dim);
    for (int j = 0; j < s.latent_dim; ++j) z(0, j) = rng.normal();
    out.means.row(k) = z * mixing;
    out.text.row(k) = out.means.row(k) * projection;
    for (int j = 0; j < s.d_t; ++j) out.text(k, j) += s.text_noise * rng.normal();
  }
  return out;
}

inline DatasetBundle make_synthetic_benchmark(const SyntheticSpec& s) {
  const SyntheticClasses classes = synthetic_classes(s);
  Rng rng(mix_seed(s.seed, 2));
  DatasetBundle b;
  b.dims = {s.d_a, s.d_v, s.d_t};
  const int n_classes = s.n_seen_classes + s.n_unseen_classes;
  const SplitCounts counts = seen_split_counts(s.samples_per_class);
  for (ClassId k = 0; k < n_classes; ++k) {
    const bool seen = k < s.n_seen_classes;
    (seen ? b.seen_classes : b.unseen_classes).insert(k);
    ClassEmbedding e{k, (seen ? "seen_" : "unseen_") + std::to_string(k), std::vector<float>(s.d_t)};
    for (int j = 0; j < s.d_t; ++j) e.text[j] = static_cast<float>(classes.text(k, j));
    b.class_embeddings.push_back(std::move(e));
    for (int i = 0; i < s.samples_per_class; ++i) {
      FeatureRecord r;
      r.label = k;
      if (!seen) {
        r.split = Split::kTestUnseen;
      } else if (i < counts.train) {
        r.split = Split::kTrainSeen;
      } else if (i < counts.train + counts.val) {
        r.split = Split::kVal;
      } else {
        r.split = Split::kTestSeen;
      }
      r.audio.resize(s.d_a);
      r.visual.resize(s.d_v);
      for (int j = 0; j < s.d_a; ++j) r.audio[j] = static_cast<float>(classes.means(k, j) + s.cluster_spread * rng.normal());
      for (int j = 0; j < s.d_v; ++j) {
        r.visual[j] = static_cast<float>(classes.means(k, s.d_a + j) + s.cluster_spread * rng.normal());
      }
      b.records.push_back(std::move(r));
    }
  }
  validate(b);
  return b;
}

}  // namespace avood
