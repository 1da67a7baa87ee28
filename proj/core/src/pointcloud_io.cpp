// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/pointcloud_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "canonpolicy/binary_io.hpp"

namespace cpol::io {

namespace {

float parse_float(const std::string& tok, std::size_t line_no) {
  float v = 0.0f;
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw Error(ErrorCode::kFormat, "bad coordinate '" + tok + "' on line " + std::to_string(line_no));
  }
  return v;
}

}  // namespace

PointCloud quantize_f32(const PointCloud& x) {
  PointMatrix p = x.points().cast<float>().cast<double>();
  return PointCloud(std::move(p));
}

PointCloud read_text(std::istream& in) {
  std::vector<std::array<float, 3>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::array<std::string, 3> tok;
    std::string extra;
    if (!(ls >> tok[0] >> tok[1] >> tok[2]) || (ls >> extra)) {
      throw Error(ErrorCode::kFormat, "expected three fields on line " + std::to_string(line_no));
    }
    rows.push_back({parse_float(tok[0], line_no), parse_float(tok[1], line_no),
                    parse_float(tok[2], line_no)});
  }
  if (rows.empty()) throw Error(ErrorCode::kFormat, "text cloud has no points");
  PointMatrix p(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int a = 0; a < 3; ++a) p(static_cast<Eigen::Index>(i), a) = rows[i][static_cast<std::size_t>(a)];
  }
  return PointCloud(std::move(p));
}

void write_text(std::ostream& out, const PointCloud& x) {
  // max_digits10 significant digits round-trip float32 exactly.
  std::array<char, 64> buf;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const auto f = static_cast<float>(x.points()(i, a));
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), f);
      if (a > 0) out << ' ';
      out.write(buf.data(), res.ptr - buf.data());
    }
    out << '\n';
  }
}

PointCloud read_pcf1(std::istream& in) {
  expect_magic(in, "PCF1");
  const auto n = read_le<std::uint32_t>(in);
  if (n == 0) throw Error(ErrorCode::kFormat, "PCF1 block with zero points");
  PointMatrix p(static_cast<Eigen::Index>(n), 3);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) p(static_cast<Eigen::Index>(i), a) = read_le<float>(in);
  }
  return PointCloud(std::move(p));
}

void write_pcf1(std::ostream& out, const PointCloud& x) {
  write_magic(out, "PCF1");
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (int a = 0; a < 3; ++a) write_le<float>(out, static_cast<float>(x.points()(i, a)));
  }
}

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::array<char, 4> head{};
  in.read(head.data(), 4);
  const bool binary = in.gcount() == 4 && std::string_view(head.data(), 4) == "PCF1";
  in.clear();
  in.seekg(0);
  return binary ? read_pcf1(in) : read_text(in);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& x, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (binary) {
    write_pcf1(out, x);
  } else {
    write_text(out, x);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace cpol::io
