#include "ipsdm/error.hpp"

namespace ipsdm {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::VocabTooSmall: return "VocabTooSmall";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::NothingToBalance: return "NothingToBalance";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NoSameClassNeighbor: return "NoSameClassNeighbor";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::SequenceLengthMismatch: return "SequenceLengthMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::VocabularyMismatch: return "VocabularyMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
  }
  return "Unknown";
}

}  // namespace ipsdm
