// Copyright 2026 The diffplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <random>

#include <gtest/gtest.h>

#include "diffplan/decision.hpp"

namespace diffplan {
namespace {

using decision::DecisionVars;
using decision::Mask;

DecisionVars rows(std::initializer_list<std::array<double, 3>> values) {
  DecisionVars dv;
  dv.b.resize(static_cast<Eigen::Index>(values.size()), 3);
  int t = 0;
  for (const auto& r : values) {
    for (int k = 0; k < 3; ++k) dv.b(t, k) = r[k];
    ++t;
  }
  return dv;
}

TEST(Decision, InitRenormalizesOverTheMask) {
  const auto dv = decision::init_decisions({0.2, 0.3, 0.5}, {false, true, true}, 4);
  EXPECT_EQ(dv.horizon(), 4);
  EXPECT_DOUBLE_EQ(dv.b(2, 0), 0.0);
  EXPECT_DOUBLE_EQ(dv.b(2, 1), 0.375);
  EXPECT_DOUBLE_EQ(dv.b(2, 2), 0.625);
}

TEST(Decision, ZeroMassFallsBackToUniform) {
  const auto p = decision::renormalize({0.0, 0.0, 0.0}, {true, true, false});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
}

TEST(Decision, RejectsBadInput) {
  EXPECT_THROW(decision::renormalize({1, 1, 1}, {false, false, false}), ValidationError);
  EXPECT_THROW(decision::renormalize({-0.1, 1, 1}, {true, true, true}), ValidationError);
}

TEST(Decision, RoundingUsesTheTimeMean) {
  EXPECT_EQ(decision::round_decision(rows({{0.1, 0.2, 0.7}, {0.1, 0.6, 0.3}})), 1);
  EXPECT_EQ(decision::round_decision(rows({{0.9, 0.1, 0.0}})), -1);
  // Ties prefer keeping the lane, then the right change.
  EXPECT_EQ(decision::round_decision(rows({{0.5, 0.5, 0.0}})), 0);
  EXPECT_EQ(decision::round_decision(rows({{0.5, 0.0, 0.5}})), 1);
}

TEST(Compliance, Examples) {
  EXPECT_TRUE(decision::compliance_check(rows({{0.0, 1.0, 0.0}})).compliant);
  EXPECT_TRUE(decision::compliance_check(rows({{0.0, 0.96, 0.04}})).compliant);
  EXPECT_FALSE(decision::compliance_check(rows({{0.0, 0.5, 0.5}})).compliant);
  EXPECT_FALSE(decision::compliance_check(rows({{0.0, 0.9, 0.0}})).compliant);
  EXPECT_FALSE(decision::compliance_check(rows({{-0.06, 1.0, 0.06}})).compliant);
  const auto rep = decision::compliance_check(rows({{0.0, 1.0, 0.0}, {0.3, 0.7, 0.0}}));
  EXPECT_FALSE(rep.compliant);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_TRUE(rep.rows[0].ok);
  EXPECT_FALSE(rep.rows[1].ok);
}

TEST(Compliance, OneHotInitIsAlwaysCompliant) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    Mask mask{rng() % 2 == 0, true, rng() % 2 == 0};
    const int pick = static_cast<int>(rng() % 3);
    std::array<double, 3> d{};
    d[pick] = 1.0;
    if (!mask[pick]) d = {0.0, 1.0, 0.0};
    EXPECT_TRUE(decision::compliance_check(decision::init_decisions(d, mask, 5)).compliant);
  }
}

}  // namespace
}  // namespace diffplan
