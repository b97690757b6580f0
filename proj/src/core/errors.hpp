#pragma once

#include <stdexcept>
#include <string>

namespace pskn {

// Base class for everything the engine throws. The two branches below matter
// for exit-code mapping: ValidationError covers bad user input (CLI exit 2),
// everything else is a pipeline/runtime failure (CLI exit 1).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Bad manifest contents: unknown instances, duplicate records, bad actions.
class ManifestError : public ValidationError {
 public:
  explicit ManifestError(const std::string& msg) : ValidationError(msg) {}
};

// Bad configuration file or option value.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Degenerate or out-of-range values (empty cloud, bad label, r <= 0, ...).
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Malformed input files (OFF meshes, CSV). Carries a line number when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
  ParseError(const std::string& msg, int line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = -1;
};

// Filesystem trouble: unreadable paths, short reads, unwritable outputs.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Corrupt or truncated checkpoint containers.
class CheckpointError : public IoError {
 public:
  explicit CheckpointError(const std::string& msg) : IoError(msg) {}
};

}  // namespace pskn
