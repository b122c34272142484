#pragma once

/**
 * Error taxonomy shared by every scout module.
 *
 * All failures surface as scout::Error carrying an ErrorKind, so callers
 * (the CLI in particular) can map them onto exit codes without parsing
 * message text.
 */

#include <stdexcept>
#include <string>
#include <string_view>

namespace scout {

enum class ErrorKind {
  InvalidParameter,
  InvalidInput,
  SequenceTooLong,
  InvalidToken,
  Parse,
  Invariant,
  DegenerateData,
  CeilingExceeded,
  Config,
  Model,
  Bridge,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::SequenceTooLong: return "sequence-too-long";
    case ErrorKind::InvalidToken: return "invalid-token";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Invariant: return "invariant";
    case ErrorKind::DegenerateData: return "degenerate-data";
    case ErrorKind::CeilingExceeded: return "ceiling-exceeded";
    case ErrorKind::Config: return "config";
    case ErrorKind::Model: return "model";
    case ErrorKind::Bridge: return "bridge";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

} // namespace scout
