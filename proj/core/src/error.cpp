// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/error.hpp"

namespace cpol {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonUnitQuaternion: return "NonUnitQuaternion";
    case ErrorCode::kInvalidRotation: return "InvalidRotation";
    case ErrorCode::kDegenerateSixD: return "DegenerateSixD";
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kDegenerateFrame: return "DegenerateFrame";
    case ErrorCode::kGimbalDegenerate: return "GimbalDegenerate";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kFormat: return "FormatError";
    case ErrorCode::kIo: return "IoError";
  }
  return "UnknownError";
}

}  // namespace cpol
