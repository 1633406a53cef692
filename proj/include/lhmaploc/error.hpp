#pragma once

#include <stdexcept>
#include <string>

namespace lhm {

// Mirrors lhm_status in lhmaploc.h; keep the numeric values in sync.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kShape = 2,
  kInvalidDepth = 3,
  kDuplicateFrame = 4,
  kBudgetExceeded = 5,
  kEmptyMap = 6,
  kBadMagic = 7,
  kBadVersion = 8,
  kTruncated = 9,
  kIo = 10,
  kParse = 11,
  kDegenerateSample = 12,
  kDivergence = 13,
  kMissingModel = 14,
  kGeneration = 15,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lhm
