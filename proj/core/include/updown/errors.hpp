#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace updown {

/// Operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity showed up in a forward value, a gradient or a loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: bad records, missing fields, bad ids.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorCode { io, bad_magic, unsupported_version, truncated, malformed };

/// Binary file could not be decoded.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

}  // namespace updown
