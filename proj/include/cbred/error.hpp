#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cbred {

// Numeric values are shared with cbred_status in cbred.h.
enum class ErrorCode : int {
  kInvalidInput = 1,
  kDegenerateSpace = 2,
  kSingularKernel = 3,
  kDegenerateJacobian = 4,
  kMissingStat = 5,
  kParseError = 6,
  kDuplicateKey = 7,
  kInsufficientClusters = 8,
  kMissingAccuracy = 9,
  kMissingArtifact = 10,
  kProvenanceMismatch = 11,
  kIo = 12,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::int64_t detail = -1)
      : std::runtime_error(what), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  // Line number for kParseError, arch id for kMissingStat / kMissingAccuracy /
  // kDuplicateKey; -1 otherwise.
  std::int64_t detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::int64_t detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what, std::int64_t detail = -1) {
  throw Error(code, what, detail);
}

}  // namespace cbred
