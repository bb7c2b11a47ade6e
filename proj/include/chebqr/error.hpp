#pragma once

#include <stdexcept>
#include <string>

namespace chebqr {

enum class ErrorKind {
  InvalidDegree,
  InsufficientDegree,
  Dimension,
  Domain,
  Numeric,
  Usage,
  Config,
  Data,
  Io,
  Convergence,
  OutOfSupport,
};

[[nodiscard]] inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDegree: return "invalid-degree";
    case ErrorKind::InsufficientDegree: return "insufficient-degree";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::OutOfSupport: return "out-of-support";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), message_(what) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

/// Raised by inversion when the target lies outside [P(0;x), P(1;x)].
class OutOfSupportError : public Error {
 public:
  OutOfSupportError(double y, double lo, double hi)
      : Error(ErrorKind::OutOfSupport, "value " + std::to_string(y) + " outside predicted range [" +
                                           std::to_string(lo) + ", " + std::to_string(hi) + "]"),
        lo_(lo),
        hi_(hi) {}

  [[nodiscard]] double lower() const noexcept { return lo_; }
  [[nodiscard]] double upper() const noexcept { return hi_; }

 private:
  double lo_;
  double hi_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace chebqr
