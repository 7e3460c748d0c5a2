#pragma once

#include <stdexcept>
#include <string>

namespace ubp {

enum class ErrorKind {
  kConfiguration,
  kDegenerateInput,
  kUsage,
  kMissingInput,
  kNumericalFailure,
  kIntegrity,
};

// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) {
  return Error(ErrorKind::kConfiguration, what);
}
inline Error degenerate_input(const std::string& what) {
  return Error(ErrorKind::kDegenerateInput, what);
}
inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}
inline Error missing_input(const std::string& what) {
  return Error(ErrorKind::kMissingInput, what);
}
inline Error numerical_failure(const std::string& what) {
  return Error(ErrorKind::kNumericalFailure, what);
}
inline Error integrity_error(const std::string& what) {
  return Error(ErrorKind::kIntegrity, what);
}

}  // namespace ubp
