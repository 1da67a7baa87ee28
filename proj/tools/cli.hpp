// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace cpol {

/// Entry point of the `cpol` tool. Returns 0 on success, 1 when a command
/// or check fails and 2 on usage errors.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cpol
