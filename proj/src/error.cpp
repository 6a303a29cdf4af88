// SPDX-License-Identifier: Apache-2.0
#include "capengine/error.hpp"

namespace capengine {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyControl: return "EmptyControl";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kDimsMismatch: return "DimsMismatch";
    case ErrorCode::kInvalidRle: return "InvalidRle";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kEmptyCategory: return "EmptyCategory";
    case ErrorCode::kNoRegions: return "NoRegions";
    case ErrorCode::kNoCandidates: return "NoCandidates";
    case ErrorCode::kNoMask: return "NoMask";
    case ErrorCode::kEmptyCaption: return "EmptyCaption";
    case ErrorCode::kRefusal: return "Refusal";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kUnknownImage: return "UnknownImage";
    case ErrorCode::kUnknownSession: return "UnknownSession";
    case ErrorCode::kUnknownMask: return "UnknownMask";
    case ErrorCode::kSessionBusy: return "SessionBusy";
    case ErrorCode::kUndecodable: return "Undecodable";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kConfig: return "Config";
  }
  return "Unknown";
}

}  // namespace capengine
