// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>

#include "canonpolicy/pointcloud.hpp"

namespace cpol::io {

// Text form: one "x y z" line per point, '#' comment lines ignored.
// Binary form: "PCF1", uint32 N (LE), then 3N float32 (LE), row-major.
// Payloads are float32; values are rounded on write and widened on read.

PointCloud read_text(std::istream& in);
void write_text(std::ostream& out, const PointCloud& x);

PointCloud read_pcf1(std::istream& in);
void write_pcf1(std::ostream& out, const PointCloud& x);

/// Dispatches on the leading magic: "PCF1" is binary, anything else text.
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& x, bool binary);

/// Rounds every coordinate through float32, the storage precision of both formats.
PointCloud quantize_f32(const PointCloud& x);

}  // namespace cpol::io
