#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fsearch {

enum class ErrorCode {
  // corpus
  MalformedLine,
  DuplicateId,
  EmptyStatement,
  UnresolvedGold,
  UnknownModality,
  InvalidRecord,
  SplitOverlap,
  // synthesis / generator
  GeneratorUnavailable,
  UnparseableResponse,
  EmptyResponse,
  RevealsAnswer,
  RevealsPremise,
  ContextAssembly,
  DestructiveUpdate,
  UnboundPlaceholder,
  // sampling
  EmptyVocab,
  CorpusTooSmall,
  DuplicateGold,
  // embedder / objectives / trainer
  DegenerateEmbedding,
  BadCheckpoint,
  ChecksumMismatch,
  EmptyTripletSet,
  EmptyPreferences,
  NumericalError,
  // index / evaluation
  EncoderMismatch,
  BadIndexFile,
  EmptyRun,
  ZeroBallots,
  // preference
  JudgeUnavailable,
  JudgeInconsistent,
  // generic
  PreconditionViolation,
  IoError,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyStatement: return "EmptyStatement";
    case ErrorCode::UnresolvedGold: return "UnresolvedGold";
    case ErrorCode::UnknownModality: return "UnknownModality";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::SplitOverlap: return "SplitOverlap";
    case ErrorCode::GeneratorUnavailable: return "GeneratorUnavailable";
    case ErrorCode::UnparseableResponse: return "UnparseableResponse";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::RevealsAnswer: return "RevealsAnswer";
    case ErrorCode::RevealsPremise: return "RevealsPremise";
    case ErrorCode::ContextAssembly: return "ContextAssembly";
    case ErrorCode::DestructiveUpdate: return "DestructiveUpdate";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::EmptyVocab: return "EmptyVocab";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::DuplicateGold: return "DuplicateGold";
    case ErrorCode::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::EmptyTripletSet: return "EmptyTripletSet";
    case ErrorCode::EmptyPreferences: return "EmptyPreferences";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::EncoderMismatch: return "EncoderMismatch";
    case ErrorCode::BadIndexFile: return "BadIndexFile";
    case ErrorCode::EmptyRun: return "EmptyRun";
    case ErrorCode::ZeroBallots: return "ZeroBallots";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::JudgeInconsistent: return "JudgeInconsistent";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Library-wide exception. `subject()` carries the offending id, line number
/// or raw response so callers (CLI, service) can report it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string subject, const std::string& detail = {})
      : std::runtime_error(format(code, subject, detail)),
        code_(code),
        subject_(std::move(subject)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  static std::string format(ErrorCode code, const std::string& subject,
                            const std::string& detail) {
    std::string msg(to_string(code));
    if (!subject.empty()) msg += "(" + subject + ")";
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ErrorCode code_;
  std::string subject_;
};

}  // namespace fsearch
