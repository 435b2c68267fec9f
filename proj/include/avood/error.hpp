// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace avood {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Rejected input: bad dimensions, broken invariants, malformed files.
class ValidationError : public Error {
 public:
  enum class Code {
    kDimensionMismatch,
    kMissingFile,
    kShapeMismatch,
    kMissingEmbedding,
    kOverlappingClasses,
    kNonFinite,
    kBadSplit,
    kMalformed,
    kPrecondition,
  };

  ValidationError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

  const char* kind() const noexcept override {
    switch (code_) {
      case Code::kDimensionMismatch: return "dimension_mismatch";
      case Code::kMissingFile: return "missing_file";
      case Code::kShapeMismatch: return "shape_mismatch";
      case Code::kMissingEmbedding: return "missing_embedding";
      case Code::kOverlappingClasses: return "overlapping_classes";
      case Code::kNonFinite: return "non_finite";
      case Code::kBadSplit: return "bad_split";
      case Code::kMalformed: return "malformed";
      case Code::kPrecondition: return "precondition";
    }
    return "validation";
  }

 private:
  Code code_;
};

// A loss became non-finite or exceeded the divergence bound.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const noexcept { return step_; }
  const char* kind() const noexcept override { return "divergence"; }

 private:
  std::int64_t step_;
};

// A training stage was asked to run before the stage it consumes.
class DependencyError : public Error {
 public:
  DependencyError(std::string missing, const std::string& what)
      : Error(what), missing_(std::move(missing)) {}
  const std::string& missing_stage() const noexcept { return missing_; }
  const char* kind() const noexcept override { return "dependency"; }

 private:
  std::string missing_;
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(ValidationError::Code::kPrecondition, what);
}

}  // namespace avood
