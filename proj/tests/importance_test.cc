// Copyright 2026 The Authors.
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

#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "hfedmoe/errors.h"
#include "hfedmoe/importance.h"
#include "oracles.h"

namespace hfedmoe {
namespace {

// Single-layer, two-expert record where expert 0 carries `scores` and
// expert 1 the complement.
RoutingRecord TwoExpertRecord(const std::vector<double>& scores) {
  RoutingRecord r;
  r.num_layers = 1;
  r.num_units = static_cast<int>(scores.size());
  r.num_experts = 2;
  r.top_k = 1;
  for (double s : scores) {
    r.scores.push_back(s);
    r.scores.push_back(1.0 - s);
    r.selected.push_back(s >= 0.5 ? 0 : 1);
  }
  return r;
}

TEST(CumulativeTest, ArithmeticMean) {
  auto r = TwoExpertRecord({0.2, 0.4, 0.6, 0.8});
  EXPECT_NEAR(CumulativeImportance(r, {0, 0}), 0.5, 1e-15);
}

TEST(CumulativeTest, ConstantScores) {
  auto r = TwoExpertRecord({0.3, 0.3, 0.3});
  EXPECT_NEAR(CumulativeImportance(r, {0, 0}), 0.3, 1e-15);
}

TEST(SpecificTest, Maximum) {
  auto r = TwoExpertRecord({0.2, 0.4, 0.6, 0.8});
  EXPECT_EQ(SpecificImportance(r, {0, 0}), 0.8);
  auto z = TwoExpertRecord({0.0, 0.0});
  EXPECT_EQ(SpecificImportance(z, {0, 0}), 0.0);
}

TEST(CombinedTest, Boundaries) {
  ImportanceConfig c;
  c.lambda = 1.0;
  EXPECT_EQ(CombinedImportance(0.31, 0.77, c), 0.31);
  c.lambda = 0.0;
  EXPECT_EQ(CombinedImportance(0.31, 0.77, c), 0.77);
}

TEST(CombinedTest, DefaultLambda) {
  EXPECT_NEAR(CombinedImportance(0.5, 0.8, ImportanceConfig{}), 0.53, 1e-15);
}

TEST(IbTest, ConstantScoresHaveZeroKl) {
  auto r = TwoExpertRecord({0.4, 0.4, 0.4});
  ImportanceConfig c;
  IbContribution ib = IbContributionOf(r, {0, 0}, c);
  EXPECT_EQ(ib.kl_term, 0.0);
  EXPECT_DOUBLE_EQ(ib.ib_score, CombinedImportance(0.4, 0.4, c));
}

TEST(IbTest, TwoUnitExample) {
  auto r = TwoExpertRecord({0.2, 0.8});
  IbContribution ib = IbContributionOf(r, {0, 0}, ImportanceConfig{});
  // (0.2 ln 0.4 + 0.8 ln 1.6) / 2 evaluated independently.
  const double want = (0.2 * std::log(0.2 / 0.5) + 0.8 * std::log(0.8 / 0.5)) / 2.0;
  EXPECT_NEAR(ib.kl_term, want, 1e-10);
  EXPECT_NEAR(ib.kl_term, 0.0964, 5e-5);
}

TEST(IbTest, ZeroBetaGivesCombinedScore) {
  std::mt19937_64 rng(4);
  ImportanceConfig c;
  c.beta = 0.0;
  auto r = testing::RandomRecord(rng, 2, 6, 4, 1);
  auto rep = BuildReport(r, c);
  for (const auto& e : rep.experts) EXPECT_EQ(e.ib_score, e.s_combined);
}

TEST(ReportTest, SingleExpertLayer) {
  RoutingRecord r;
  r.num_layers = 1;
  r.num_units = 3;
  r.num_experts = 1;
  r.top_k = 1;
  r.scores = {1.0, 1.0, 1.0};
  r.selected = {0, 0, 0};
  auto rep = BuildReport(r, ImportanceConfig{});
  EXPECT_EQ(rep.experts[0].s_cumul, 1.0);
  EXPECT_EQ(rep.experts[0].s_specific, 1.0);
  EXPECT_EQ(rep.experts[0].kl_term, 0.0);
}

TEST(ReportTest, MirroredExpertsGiveMirroredReports) {
  RoutingRecord r = TwoExpertRecord({0.1, 0.9});
  auto rep = BuildReport(r, ImportanceConfig{});
  EXPECT_DOUBLE_EQ(rep.at({0, 0}).s_cumul, rep.at({0, 1}).s_cumul);
  EXPECT_DOUBLE_EQ(rep.at({0, 0}).s_specific, rep.at({0, 1}).s_specific);
  EXPECT_DOUBLE_EQ(rep.at({0, 0}).kl_term, rep.at({0, 1}).kl_term);
}

TEST(ReportTest, FieldByFieldOracle) {
  std::mt19937_64 rng(8);
  ImportanceConfig c;
  for (int trial = 0; trial < 50; ++trial) {
    auto r = testing::RandomRecord(rng, 3, 1 + trial % 9, 5, 2);
    auto rep = BuildReport(r, c);
    for (int l = 0; l < 3; ++l) {
      for (int e = 0; e < 5; ++e) {
        auto o = testing::ComputeImportanceOracle(r, l, e, c.lambda, c.beta,
                                                  c.epsilon);
        const auto& got = rep.at({l, e});
        EXPECT_NEAR(got.s_cumul, o.cumul, 1e-12);
        EXPECT_EQ(got.s_specific, o.specific);
        EXPECT_NEAR(got.s_combined, o.combined, 1e-12);
        EXPECT_NEAR(got.marginal, o.marginal, 1e-12);
        EXPECT_NEAR(got.kl_term, o.kl, 1e-12);
        EXPECT_NEAR(got.ib_score, o.ib, 1e-12);
      }
    }
  }
}

TEST(ReportTest, Properties) {
  std::mt19937_64 rng(19);
  ImportanceConfig c;
  for (int trial = 0; trial < 200; ++trial) {
    auto r = testing::RandomRecord(rng, 2, 1 + trial % 12, 6, 1,
                                   0.5 + trial % 5);
    auto rep = BuildReport(r, c);
    for (int l = 0; l < 2; ++l) {
      double layer_sum = 0.0;
      for (int e = 0; e < 6; ++e) {
        const auto& x = rep.at({l, e});
        EXPECT_LE(x.s_cumul, x.s_specific);
        EXPECT_GE(x.kl_term, 0.0);
        EXPECT_NEAR(x.ib_score, x.s_combined - c.beta * x.kl_term, 1e-12);
        layer_sum += x.s_cumul;
      }
      EXPECT_NEAR(layer_sum, 1.0, 1e-10);
    }
  }
}

TEST(ReportTest, RejectsBadInput) {
  RoutingRecord empty;
  empty.num_layers = 1;
  empty.num_experts = 2;
  EXPECT_THROW(BuildReport(empty, ImportanceConfig{}), InputError);
  auto r = TwoExpertRecord({0.5});
  EXPECT_THROW(CumulativeImportance(r, {1, 0}), InputError);
  ImportanceConfig bad;
  bad.lambda = 1.5;
  EXPECT_THROW(bad.Validate(), ConfigError);
}

TEST(ImportanceCsvTest, HeaderAndRowCount) {
  auto rep = BuildReport(TwoExpertRecord({0.2, 0.8}), ImportanceConfig{});
  std::ostringstream os;
  WriteImportanceCsvHeader(os);
  WriteImportanceCsvRows(os, 3, "1", rep);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "round,client,layer,expert,s_cumul,s_specific,s,kl,ib");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
  EXPECT_EQ(s.find("3,1,0,0,0.5,0.8,"), s.find('\n') + 1);
}

}  // namespace
}  // namespace hfedmoe
