#pragma once

#include <stdexcept>
#include <string>

namespace flowdehaze {

// Each error kind maps onto one CLI exit code.
enum class ErrorKind { validation = 2, data = 3, divergence = 4, incompatibility = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Invalid arguments, specs or configuration values.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Missing, unreadable or malformed data on disk.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Non-finite values during training or ODE integration.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::divergence, what) {}
};

/// Checkpoint and configuration/architecture disagree.
class IncompatibilityError : public Error {
 public:
  explicit IncompatibilityError(const std::string& what) : Error(ErrorKind::incompatibility, what) {}
};

const char* error_kind_name(ErrorKind kind);

/// Throws an error of the same concrete kind as `e` with `context` prepended to its message.
[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context);

}  // namespace flowdehaze
