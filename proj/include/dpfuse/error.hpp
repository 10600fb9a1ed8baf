#pragma once

#include <stdexcept>
#include <string>

namespace dpfuse {

/// Failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  kUsage,       // bad arguments or configuration
  kValidation,  // malformed or inconsistent input data
  kNumeric,     // divergence, NaN, solver failure
  kIo,          // filesystem problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}
inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::kValidation, what);
}
inline Error numeric_error(const std::string& what) {
  return Error(ErrorKind::kNumeric, what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorKind::kIo, what);
}

const char* to_string(ErrorKind kind) noexcept;

/// Process exit status: 1 usage, 2 validation and I/O, 3 numeric.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kUsage: return 1;
    case ErrorKind::kNumeric: return 3;
    case ErrorKind::kValidation:
    case ErrorKind::kIo: return 2;
  }
  return 2;
}

}  // namespace dpfuse
