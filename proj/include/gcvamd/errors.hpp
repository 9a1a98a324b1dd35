#pragma once

#include <stdexcept>
#include <string>

namespace gcvamd {

// Invalid-argument failures use std::invalid_argument directly; the types
// below cover the failure modes that callers are expected to tell apart.

/// (I - A^T) could not be inverted while mapping noise to latents.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss component or gradient became non-finite or exceeded the guard.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::string component, const std::string& detail)
      : std::runtime_error("training diverged in '" + component + "': " + detail),
        component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gcvamd
