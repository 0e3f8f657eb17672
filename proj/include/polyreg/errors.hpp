#pragma once

#include <stdexcept>
#include <string>

namespace polyreg {

/// Caller passed inconsistent shapes, dimensions or values.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A least-squares system did not have full column rank.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every robust weight vanished during reweighting.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A randomized estimator never produced a usable hypothesis.
class EstimationFailedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible configuration (checkpoint vs. model, unknown keys, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace polyreg
