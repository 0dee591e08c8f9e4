#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ipsdm {

enum class ErrorCode {
  InvalidArgument,
  Io,
  Config,
  // corpus
  MissingColumn,
  UnknownLabel,
  EmptyText,
  MalformedCsv,
  DegenerateSplit,
  // tokenizer
  VocabTooSmall,
  UnknownId,
  // balance
  NothingToBalance,
  TooFewSamples,
  NoSameClassNeighbor,
  // model
  AllMasked,
  SequenceLengthMismatch,
  StaleCache,
  // optim
  ShapeMismatch,
  NonFiniteGradient,
  // metrics
  NonFiniteInput,
  LengthMismatch,
  EmptyMatrix,
  // trainer
  DivergedLoss,
  EmptySplit,
  VocabularyMismatch,
  VersionMismatch,
  CorruptFile,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ipsdm
