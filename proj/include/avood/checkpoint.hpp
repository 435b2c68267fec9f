// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: `manifest.json` (shapes, config, seed, extra model
// metadata) next to `params.bin`, one flat little-endian f32 array holding
// every tensor back to back in manifest order.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "avood/binary_io.hpp"
#include "avood/error.hpp"
#include "avood/nn.hpp"

namespace avood {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "avood-checkpoint";

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(ValidationError::Code::kMissingFile, "missing file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(ValidationError::Code::kMalformed, path.string() + ": " + e.what());
  }
}

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const json& meta,
                     const nn::ConstNamedParams<T>& params) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json tensors = json::array();
  std::vector<float> flat;
  for (const auto& [name, p] : params) {
    const auto& v = p->value();
    tensors.push_back({{"name", name}, {"shape", {v.rows(), v.cols()}}, {"offset", flat.size()}});
    for (Eigen::Index i = 0; i < v.size(); ++i) flat.push_back(static_cast<float>(v.data()[i]));
  }
  json manifest = {{"format", kCheckpointFormat}, {"version", 1},         {"kind", kind},
                   {"dtype", "f32-le"},          {"params_file", "params.bin"}, {"num_values", flat.size()},
                   {"tensors", tensors},         {"meta", meta}};
  io::write_le<float>(dir / "params.bin", flat);
  write_json(dir / "manifest.json", manifest);
}

// Loads parameter values into `params` (shapes must match the manifest) and
// returns the stored metadata.
template <class T>
json load_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nn::NamedParams<T>& params) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != kCheckpointFormat || manifest.value("kind", "") != kind) {
    throw ValidationError(ValidationError::Code::kMalformed,
                          dir.string() + " is not a '" + kind + "' checkpoint");
  }
  const auto flat = io::read_le<float>(dir / manifest.at("params_file").get<std::string>(),
                                       manifest.at("num_values").get<std::size_t>());
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw ValidationError(ValidationError::Code::kShapeMismatch, "checkpoint tensor count differs from model");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& entry = tensors[k];
    auto& value = params[k].second->mutable_value();
    const auto rows = entry.at("shape")[0].get<Eigen::Index>();
    const auto cols = entry.at("shape")[1].get<Eigen::Index>();
    if (entry.at("name").get<std::string>() != params[k].first || rows != value.rows() || cols != value.cols()) {
      throw ValidationError(ValidationError::Code::kShapeMismatch, "checkpoint tensor '" + params[k].first +
                                                                       "' does not match the model layout");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = static_cast<T>(flat[offset + i]);
  }
  return manifest.at("meta");
}

template <class T>
nn::ConstNamedParams<T> const_params(const nn::NamedParams<T>& params) {
  nn::ConstNamedParams<T> out;
  for (const auto& [name, p] : params) out.emplace_back(name, p);
  return out;
}

}  // namespace avood
