#pragma once

#include <stdexcept>
#include <string>

namespace scenemaker {

// Base of every error thrown by the library. The CLI maps these to exit code 1
// (user error) except for InternalError-derived ones, which map to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateRotationError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class LayoutInfeasibleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MaskCoverageError : public Error {
 public:
  using Error::Error;
};

// Persistence failures. `kind` names the failure class so callers and tests can
// distinguish a bad magic from a truncated payload without string matching.
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, Truncated, ShapeMismatch, Parse, Validation, Version, Io };

  FormatError(Kind kind, const std::string& what) : Error(std::string(kind_name(kind)) + ": " + what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  static const char* kind_name(Kind kind) noexcept {
    switch (kind) {
      case Kind::BadMagic: return "bad-magic";
      case Kind::Truncated: return "truncated";
      case Kind::ShapeMismatch: return "shape-mismatch";
      case Kind::Parse: return "parse";
      case Kind::Validation: return "validation";
      case Kind::Version: return "version-mismatch";
      case Kind::Io: return "io";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

// Non-finite activation or loss during a model pass.
class NumericalError : public InternalError {
 public:
  using InternalError::InternalError;
};

}  // namespace scenemaker
