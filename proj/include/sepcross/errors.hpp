#pragma once

#include <stdexcept>
#include <string>

namespace sepcross {

/// Base of all library errors. The CLI maps ConfigError to exit code 2 and
/// every other Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state or parameter lies outside the model's domain box.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Saddle/separatrix/level-line construction failed (wrong topology,
/// Newton divergence, no return of a traced orbit).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Condition C (positive separatrix fluxes) does not hold.
class ConditionError : public Error {
 public:
  using Error::Error;
};

/// An operation was called outside its documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Point too close to the separatrix for action-angle variables.
class NearSeparatrixError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// Numerical integration could not proceed (step underflow, step budget).
class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or invalid run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An output artifact could not be written. Counts as a configuration
/// problem (the path came from the run configuration).
class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace sepcross
