#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace repsim {

// Error categories double as the machine-parseable tag printed by the CLI.
enum class ErrorKind {
  dimension,
  symmetry,
  rank,
  insufficient_samples,
  degenerate_features,
  non_finite,
  config,
  pretrain_quality,
  diverged,
  parse,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::symmetry: return "symmetry";
    case ErrorKind::rank: return "rank";
    case ErrorKind::insufficient_samples: return "insufficient_samples";
    case ErrorKind::degenerate_features: return "degenerate_features";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::config: return "config";
    case ErrorKind::pretrain_quality: return "pretrain_quality";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when a finetune run produces a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(int epoch, const std::string& what)
      : Error(ErrorKind::diverged, what), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// NPY parse failures carry the header field that was rejected.
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& what)
      : Error(ErrorKind::parse, field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace repsim
