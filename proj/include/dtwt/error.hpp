#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dtwt {

enum class ErrorCode {
  // td-model
  JsonSyntax,
  MissingField,
  UnknownValueFrom,
  ModelSyntax,
  UnknownIdentifier,
  NegativeIndex,
  GuessOutsideBounds,
  ConflictingBounds,
  DuplicateAssignment,
  ClashingGlobalGuess,
  ClashingGlobalConstraint,
  DanglingReference,
  AlgebraicCycle,
  UnresolvedInput,
  UnusedParam,
  // dynamics
  UnknownOutput,
  UnknownChannel,
  NonMonotoneSchedule,
  DimensionMismatch,
  NumericDomain,
  StepSizeUnderflow,
  IntegrationFailed,
  // learning
  UnknownState,
  InvalidConfig,
  NoProgress,
  // twin
  SystemMismatch,
  UnknownProperty,
  TimeBeforeAnchor,
  TimeInPast,
  ReadOnlyProperty,
  InvalidActions,
  InsufficientCoverage,
  // simulators / io
  InvalidSimulation,
  SchemaMismatch,
  NonMonotoneTime,
  Io,
  // service
  NotFound,
  Conflict,
  StaleFit,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::JsonSyntax: return "JsonSyntax";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::UnknownValueFrom: return "UnknownValueFrom";
    case ErrorCode::ModelSyntax: return "ModelSyntax";
    case ErrorCode::UnknownIdentifier: return "UnknownIdentifier";
    case ErrorCode::NegativeIndex: return "NegativeIndex";
    case ErrorCode::GuessOutsideBounds: return "GuessOutsideBounds";
    case ErrorCode::ConflictingBounds: return "ConflictingBounds";
    case ErrorCode::DuplicateAssignment: return "DuplicateAssignment";
    case ErrorCode::ClashingGlobalGuess: return "ClashingGlobalGuess";
    case ErrorCode::ClashingGlobalConstraint: return "ClashingGlobalConstraint";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::AlgebraicCycle: return "AlgebraicCycle";
    case ErrorCode::UnresolvedInput: return "UnresolvedInput";
    case ErrorCode::UnusedParam: return "UnusedParam";
    case ErrorCode::UnknownOutput: return "UnknownOutput";
    case ErrorCode::UnknownChannel: return "UnknownChannel";
    case ErrorCode::NonMonotoneSchedule: return "NonMonotoneSchedule";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NumericDomain: return "NumericDomain";
    case ErrorCode::StepSizeUnderflow: return "StepSizeUnderflow";
    case ErrorCode::IntegrationFailed: return "IntegrationFailed";
    case ErrorCode::UnknownState: return "UnknownState";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NoProgress: return "NoProgress";
    case ErrorCode::SystemMismatch: return "SystemMismatch";
    case ErrorCode::UnknownProperty: return "UnknownProperty";
    case ErrorCode::TimeBeforeAnchor: return "TimeBeforeAnchor";
    case ErrorCode::TimeInPast: return "TimeInPast";
    case ErrorCode::ReadOnlyProperty: return "ReadOnlyProperty";
    case ErrorCode::InvalidActions: return "InvalidActions";
    case ErrorCode::InsufficientCoverage: return "InsufficientCoverage";
    case ErrorCode::InvalidSimulation: return "InvalidSimulation";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::NonMonotoneTime: return "NonMonotoneTime";
    case ErrorCode::Io: return "Io";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::StaleFit: return "StaleFit";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code and, where it makes sense, a
/// location (JSON path, byte offset, row number...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string where = {})
      : std::runtime_error(compose(code, message, where)),
        code_(code),
        detail_(std::move(message)),
        where_(std::move(where)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& where() const noexcept { return where_; }

 private:
  static std::string compose(ErrorCode code, const std::string& message, const std::string& where) {
    std::string out(to_string(code));
    if (!where.empty()) out += " at " + where;
    out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::string detail_;
  std::string where_;
};

enum class Severity { Error, Warning };

struct Diagnostic {
  ErrorCode code;
  Severity severity = Severity::Error;
  std::string path;
  std::string message;
};

inline bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  for (const auto& d : diagnostics)
    if (d.severity == Severity::Error) return true;
  return false;
}

}  // namespace dtwt
