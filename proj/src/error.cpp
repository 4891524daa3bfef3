#include "cbred/error.hpp"

namespace cbred {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kDegenerateSpace: return "DegenerateSpace";
    case ErrorCode::kSingularKernel: return "SingularKernel";
    case ErrorCode::kDegenerateJacobian: return "DegenerateJacobian";
    case ErrorCode::kMissingStat: return "MissingStat";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateKey: return "DuplicateKey";
    case ErrorCode::kInsufficientClusters: return "InsufficientClusters";
    case ErrorCode::kMissingAccuracy: return "MissingAccuracy";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
    case ErrorCode::kProvenanceMismatch: return "ProvenanceMismatch";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace cbred
