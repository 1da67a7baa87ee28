// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "canonpolicy/error.hpp"
#include "canonpolicy/harness.hpp"

namespace cpol {
namespace {

TEST(Config, DefaultsDumpAndParseBack) {
  const HarnessConfig d;
  const std::string text = dump_config(d);
  EXPECT_NE(text.find("[policy]\n"), std::string::npos);
  EXPECT_NE(text.find("widths = 64,128,256\n"), std::string::npos);
  EXPECT_EQ(dump_config(parse_config(text)), text);
}

TEST(Config, OverridesApplyOverBase) {
  const HarnessConfig c = parse_config(
      "# comment\n"
      "[policy]\n"
      "action_mode = relative   # trailing\n"
      "head_kind = flow\n"
      "[vn]\n"
      "mode = so2\n"
      "q = 6\n"
      "[encoder]\n"
      "widths = 8, 16\n"
      "[train]\n"
      "lr = 0.001\n"
      "freeze_phi = true\n"
      "[data]\n"
      "template = mug\n");
  EXPECT_EQ(c.policy.action_mode, ActionMode::kRelative);
  EXPECT_EQ(c.policy.head_kind, HeadKind::kFlow);
  EXPECT_EQ(c.policy.vn.mode, RotMode::kSO2);
  EXPECT_EQ(c.policy.vn.q, 6);
  EXPECT_EQ(c.train.lr, 0.001);
  EXPECT_TRUE(c.train.freeze_phi);
  EXPECT_EQ(c.data.template_name, "mug");
  EXPECT_EQ(c.policy.horizon, 8);

  const HarnessConfig again = parse_config(dump_config(c));
  EXPECT_EQ(again.policy, c.policy);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("[policy]\nbogus = 1\n"), Error);
  EXPECT_THROW(parse_config("policy.horizon = x\n"), Error);
  EXPECT_THROW(parse_config("policy.horizon = 0\n"), Error);
  EXPECT_THROW(parse_config("[policy\n"), Error);
  EXPECT_THROW(parse_config("policy.horizon\n"), Error);
  EXPECT_THROW(parse_config("data.template = teapot\n"), Error);
  EXPECT_THROW(parse_config("policy.canonicalize = maybe\n"), Error);
  try {
    parse_config("\n\nvn.qq = 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

}  // namespace
}  // namespace cpol
