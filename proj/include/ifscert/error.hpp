#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ifscert {

enum class ErrorCode {
  InvalidPoint,
  InvalidSpec,
  StepTooLarge,
  RankCollapse,
  BaseMismatch,
  SingularMatrix,
  NaNGuard,
  EnumerationTooLarge,
  WordTooShort,
  BadConstants,
  FieldNotInvariant,
  MissingConstants,
  EtaOutOfWindow,
  NontransverseFailed,
  NegativeDenominator,
  BasisDeficient,
  FDInstability,
  ConfigInvalid,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPoint: return "InvalidPoint";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::RankCollapse: return "RankCollapse";
    case ErrorCode::BaseMismatch: return "BaseMismatch";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NaNGuard: return "NaNGuard";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::WordTooShort: return "WordTooShort";
    case ErrorCode::BadConstants: return "BadConstants";
    case ErrorCode::FieldNotInvariant: return "FieldNotInvariant";
    case ErrorCode::MissingConstants: return "MissingConstants";
    case ErrorCode::EtaOutOfWindow: return "EtaOutOfWindow";
    case ErrorCode::NontransverseFailed: return "NontransverseFailed";
    case ErrorCode::NegativeDenominator: return "NegativeDenominator";
    case ErrorCode::BasisDeficient: return "BasisDeficient";
    case ErrorCode::FDInstability: return "FDInstability";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace ifscert
