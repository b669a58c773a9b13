#pragma once

#include <stdexcept>
#include <string>

namespace gaitlab {

enum class ErrorKind {
  dimension,
  config,
  state,
  format,
  degenerate_batch,
  degenerate_feature,
  oversampling,
  split,
  budget,
  build,
  io,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::config: return "config";
    case ErrorKind::state: return "state";
    case ErrorKind::format: return "format";
    case ErrorKind::degenerate_batch: return "degenerate-batch";
    case ErrorKind::degenerate_feature: return "degenerate-feature";
    case ErrorKind::oversampling: return "oversampling";
    case ErrorKind::split: return "split";
    case ErrorKind::budget: return "budget";
    case ErrorKind::build: return "build";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace gaitlab
