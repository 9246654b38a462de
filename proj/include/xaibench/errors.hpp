#pragma once

#include <stdexcept>
#include <string>

namespace xb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, grids, hyperparameters or config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset generation failed (e.g. lesion placement infeasible).
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Operands whose extents do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf detected in a layer output or a training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (no positives or no negatives).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol violated (e.g. class-1 sample in a class-2 protocol).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A saliency method met a layer it has no rule for, or a missing pattern.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written, or a file format is malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed. `missing_input` marks failures caused by absent
/// outputs of an earlier stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, bool missing_input = false)
      : Error(stage + ": " + what), stage_(std::move(stage)), missing_input_(missing_input) {}
  const std::string& stage() const { return stage_; }
  bool missing_input() const { return missing_input_; }

 private:
  std::string stage_;
  bool missing_input_;
};

}  // namespace xb
