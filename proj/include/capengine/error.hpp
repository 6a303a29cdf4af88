// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capengine {

enum class ErrorCode {
  kInvalidArgument,
  kEmptyControl,
  kEmptyMask,
  kDimsMismatch,
  kInvalidRle,
  kOutOfBounds,
  kEmptyCategory,
  kNoRegions,
  kNoCandidates,
  kNoMask,
  kEmptyCaption,
  kRefusal,
  kBackendUnavailable,
  kMalformedResponse,
  kUnknownImage,
  kUnknownSession,
  kUnknownMask,
  kSessionBusy,
  kUndecodable,
  kTooLarge,
  kConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the engine carries one of the codes above so that
/// callers (HTTP layer, CLI) can map it to a status or exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace capengine
