// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cpol {

enum class ErrorCode {
  kNonUnitQuaternion,
  kInvalidRotation,
  kDegenerateSixD,
  kTooFewPoints,
  kDegenerateFrame,
  kGimbalDegenerate,
  kShapeMismatch,
  kConfig,
  kFormat,
  kIo,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; `code()` tells the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cpol
