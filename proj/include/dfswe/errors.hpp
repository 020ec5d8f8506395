#pragma once

#include <stdexcept>
#include <string>

namespace dfswe {

/// Base class for every error raised by the library. `code()` is a stable
/// identifier printed by the command-line tool.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

  /// True for errors caused by bad input data or models (CLI exit code 2).
  virtual bool is_data_error() const noexcept { return true; }

private:
  std::string code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error("E_CONFIG", what) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error("E_SHAPE", what) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error("E_NUMERIC", what) {}
};

class ModelCorruption : public Error {
public:
  explicit ModelCorruption(const std::string& what) : Error("E_MODEL", what) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error("E_FORMAT", what) {}
  FormatError(std::string code, const std::string& what) : Error(std::move(code), what) {}
};

class ChecksumError : public FormatError {
public:
  explicit ChecksumError(const std::string& what) : FormatError("E_CHECKSUM", what) {}
};

class VersionError : public FormatError {
public:
  explicit VersionError(const std::string& what) : FormatError("E_VERSION", what) {}
};

class ReceiptMismatch : public Error {
public:
  explicit ReceiptMismatch(const std::string& what) : Error("E_RECEIPT", what) {}
};

class DegenerateSegment : public Error {
public:
  explicit DegenerateSegment(const std::string& what) : Error("E_DEGENERATE", what) {}
};

class TrainingDiverged : public Error {
public:
  explicit TrainingDiverged(const std::string& what) : Error("E_DIVERGED", what) {}
  bool is_data_error() const noexcept override { return false; }
};

class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error("E_IO", what) {}
  bool is_data_error() const noexcept override { return false; }
};

}  // namespace dfswe
