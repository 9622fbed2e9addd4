#pragma once

#include <stdexcept>
#include <string>

namespace flowda {

/// Failure category. Each maps to one CLI exit code.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Invalid configuration or out-of-contract argument.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Shape mismatch, malformed file, bad index.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class FormatError : public DataError {
public:
  explicit FormatError(const std::string& what) : DataError(what) {}
};

class ShapeError : public DataError {
public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

/// Non-finite values, integration blowup, singular systems.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 1;
}

}  // namespace flowda
