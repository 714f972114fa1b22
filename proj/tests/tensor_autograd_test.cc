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
#include <vector>

#include <gtest/gtest.h>

#include "hfedmoe/autograd.h"
#include "hfedmoe/errors.h"
#include "hfedmoe/moe.h"
#include "hfedmoe/params.h"
#include "hfedmoe/tensor.h"
#include "oracles.h"

namespace hfedmoe {
namespace {

using testing::LogSumExpLoss;
using testing::NaiveAffine;
using testing::ToMatrix;

Tensor RandomTensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

ParamGroup LinearParams(const std::string& id, Tensor w, Tensor b) {
  return ParamGroup{id, {std::move(w), std::move(b)}, true};
}

Tensor RunLinear(const Tensor& x, const ParamGroup& g) {
  Tape tape;
  return tape.value(ForwardLinear(tape, tape.Constant(x), g));
}

TEST(TensorTest, ShapeAndAccess) {
  Tensor t = Tensor::FromRows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.row(1)[0], 4.0);
  EXPECT_EQ(ShapeToString(t.shape()), "[2x3]");
  EXPECT_EQ(t.Reshaped({3, 2}).at(2, 1), 6.0);
}

TEST(TensorTest, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::FromRows({{1, 2}, {3}}), DimensionError);
  EXPECT_THROW(Tensor({2, 3}).Reshaped({4, 2}), DimensionError);
}

TEST(TensorTest, FiniteCheck) {
  Tensor t({2}, 1.0);
  EXPECT_TRUE(t.AllFinite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.AllFinite());
}

TEST(LinearTest, IdentityWeights) {
  auto g = LinearParams("l", Tensor::FromRows({{1, 0}, {0, 1}}), Tensor({2}));
  Tensor y = RunLinear(Tensor::FromRows({{1, 0}}), g);
  EXPECT_EQ(y.values(), (std::vector<double>{1, 0}));
}

TEST(LinearTest, ZeroInputGivesBias) {
  auto g = LinearParams("l", Tensor::FromRows({{7, -2}, {0.5, 9}}),
                        Tensor({2}, std::vector<double>{3, 4}));
  Tensor y = RunLinear(Tensor::FromRows({{0, 0}}), g);
  EXPECT_EQ(y.values(), (std::vector<double>{3, 4}));
}

TEST(LinearTest, MatchesNaiveMatmul) {
  std::mt19937_64 rng(11);
  Tensor x = RandomTensor({4, 8}, rng);
  auto g = LinearParams("l", RandomTensor({8, 5}, rng), RandomTensor({5}, rng));
  Tensor y = RunLinear(x, g);
  auto want = NaiveAffine(ToMatrix(x), ToMatrix(g.tensors[0]), g.tensors[1].values());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y.at(i, j), want[i][j], 1e-12);
  }
}

TEST(LinearTest, ShapeMismatchThrows) {
  auto g = LinearParams("l", Tensor({3, 2}), Tensor({2}));
  EXPECT_THROW(RunLinear(Tensor({1, 2}), g), DimensionError);
}

TEST(SoftmaxTest, UniformRow) {
  Tensor s = SoftmaxRows(Tensor::FromRows({{0, 0, 0}}));
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(SoftmaxTest, SaturatedRowIsStable) {
  Tensor s = SoftmaxRows(Tensor::FromRows({{1000, 0, 0}}));
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  EXPECT_TRUE(s.AllFinite());
}

TEST(SoftmaxTest, MatchesDirectEvaluation) {
  Tensor s = SoftmaxRows(Tensor::FromRows({{1, 2, 3}}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(s[1], std::exp(2.0) / z, 1e-12);
  EXPECT_NEAR(s[2], std::exp(3.0) / z, 1e-12);
}

TEST(CrossEntropyTest, HugeMarginGivesZeroLoss) {
  Tensor logits = Tensor::FromRows({{100, 0, 0}, {0, 0, 100}});
  EXPECT_NEAR(CrossEntropyValue(logits, std::vector<int>{0, 2}), 0.0, 1e-12);
}

TEST(CrossEntropyTest, UniformLogits) {
  Tensor logits = Tensor::FromRows({{0.3, 0.3, 0.3, 0.3}});
  EXPECT_NEAR(CrossEntropyValue(logits, std::vector<int>{2}), std::log(4.0), 1e-12);
}

TEST(CrossEntropyTest, MatchesLogSumExp) {
  std::mt19937_64 rng(5);
  Tensor logits = RandomTensor({3, 4}, rng);
  std::vector<int> y{0, 3, 1};
  EXPECT_NEAR(CrossEntropyValue(logits, y), LogSumExpLoss(ToMatrix(logits), y),
              1e-12);
}

TEST(CrossEntropyTest, RejectsBadLabels) {
  Tensor logits({2, 3});
  EXPECT_THROW(CrossEntropyValue(logits, std::vector<int>{0, 3}), InputError);
  EXPECT_THROW(CrossEntropyValue(logits, std::vector<int>{0}), DimensionError);
}

TEST(TapeTest, NonFiniteValueThrows) {
  Tape tape;
  Tensor bad({1, 2});
  bad[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(tape.Constant(bad), NumericError);
}

TEST(TapeTest, BackwardTwiceThrows) {
  ParamStore store;
  store.Add(LinearParams("l", Tensor({2, 2}, 0.1), Tensor({2})));
  Tape tape;
  Var y = ForwardLinear(tape, tape.Constant(Tensor::FromRows({{1, 2}})),
                        store.Get("l"));
  LossValue loss = tape.CrossEntropy(y, std::vector<int>{1});
  tape.Backward(loss, store);
  EXPECT_THROW(tape.Backward(loss, store), StateError);
}

TEST(TapeTest, BackwardOnEmptyTapeThrows) {
  Tape tape;
  ParamStore store;
  EXPECT_THROW(tape.Backward(LossValue{}, store), StateError);
}

// Loss of a fresh forward pass, used by the finite-difference checks.
double ModelLoss(const MoeModel& m, const Tensor& x, const std::vector<int>& y) {
  return CrossEntropyValue(m.Logits(x), y);
}

struct FdStats {
  double max_rel = 0.0;
  int checked = 0;
};

FdStats CheckGradients(MoeModel& model, const Tensor& x, const std::vector<int>& y,
                       const GradientMask& mask) {
  Tape tape;
  ForwardOutput fwd = model.Forward(tape, x);
  LossValue loss = tape.CrossEntropy(fwd.logits, y);
  GradientSet grads = tape.Backward(loss, model.params(), mask);
  FdStats stats;
  for (ParamGroup& g : model.params().groups()) {
    const auto& gg = grads.Get(g.id);
    for (std::size_t t = 0; t < g.tensors.size(); ++t) {
      for (std::size_t i = 0; i < g.tensors[t].size(); ++i) {
        const double analytic = gg[t][i];
        if (mask.count(g.id)) {
          EXPECT_EQ(analytic, 0.0) << g.id;
          continue;
        }
        const double numeric = testing::CentralDifference(
            &g.tensors[t][i], 1e-5, [&] { return ModelLoss(model, x, y); });
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        stats.max_rel = std::max(stats.max_rel, std::abs(analytic - numeric) / scale);
        ++stats.checked;
      }
    }
  }
  return stats;
}

TEST(GradientTest, MatchesFiniteDifferences) {
  ModelConfig c;
  c.num_layers = 2;
  c.experts_per_layer = 3;
  c.top_k = 2;
  c.input_dim = 4;
  c.hidden_dim = 5;
  c.expert_hidden_dim = 4;
  c.output_dim = 3;
  MoeModel model(c, 3);
  std::mt19937_64 rng(17);
  Tensor x = RandomTensor({6, 4}, rng);
  std::vector<int> y{0, 1, 2, 2, 1, 0};
  FdStats s = CheckGradients(model, x, y, {});
  EXPECT_GT(s.checked, 100);
  EXPECT_LT(s.max_rel, 1e-4);
}

TEST(GradientTest, PerTokenModelMatchesFiniteDifferences) {
  ModelConfig c;
  c.num_layers = 1;
  c.experts_per_layer = 3;
  c.top_k = 1;
  c.input_dim = 3;
  c.hidden_dim = 4;
  c.expert_hidden_dim = 3;
  c.output_dim = 2;
  c.routing_unit = RoutingUnit::kPerToken;
  c.tokens_per_sample = 3;
  MoeModel model(c, 8);
  std::mt19937_64 rng(2);
  Tensor x = RandomTensor({2, 3, 3}, rng);
  FdStats s = CheckGradients(model, x, {0, 1}, {});
  EXPECT_LT(s.max_rel, 1e-4);
}

TEST(GradientTest, MaskedRunMatchesFiniteDifferencesElsewhere) {
  ModelConfig c;
  c.num_layers = 2;
  c.experts_per_layer = 3;
  c.top_k = 2;
  c.input_dim = 4;
  c.hidden_dim = 4;
  c.expert_hidden_dim = 3;
  c.output_dim = 3;
  MoeModel model(c, 4);
  std::mt19937_64 rng(23);
  Tensor x = RandomTensor({5, 4}, rng);
  GradientMask mask{ExpertGroupId({0, 1}), ExpertGroupId({1, 0})};
  FdStats s = CheckGradients(model, x, {2, 0, 1, 1, 0}, mask);
  EXPECT_LT(s.max_rel, 1e-4);
}

TEST(GradientTest, MaskAllGivesZeros) {
  ModelConfig c;
  c.experts_per_layer = 3;
  c.input_dim = 4;
  c.hidden_dim = 4;
  c.expert_hidden_dim = 3;
  MoeModel model(c, 1);
  std::mt19937_64 rng(9);
  GradientMask all;
  for (const auto& g : model.params().groups()) all.insert(g.id);
  Tape tape;
  auto fwd = model.Forward(tape, RandomTensor({3, 4}, rng));
  GradientSet grads =
      tape.Backward(tape.CrossEntropy(fwd.logits, std::vector<int>{0, 1, 2}),
                    model.params(), all);
  for (const auto& [id, ts] : grads.all()) {
    for (const Tensor& t : ts) {
      for (double v : t.values()) EXPECT_EQ(v, 0.0) << id;
    }
  }
}

TEST(GradientTest, MaskingIsolationIsBitwise) {
  ModelConfig c;
  c.num_layers = 2;
  c.experts_per_layer = 4;
  c.top_k = 2;
  c.input_dim = 6;
  c.hidden_dim = 8;
  c.expert_hidden_dim = 6;
  c.output_dim = 3;
  MoeModel model(c, 12);
  std::mt19937_64 rng(31);
  Tensor x = RandomTensor({16, 6}, rng);
  std::vector<int> y(16);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 3);

  auto run = [&](const GradientMask& mask) {
    Tape tape;
    auto fwd = model.Forward(tape, x);
    return tape.Backward(tape.CrossEntropy(fwd.logits, y), model.params(), mask);
  };
  const GradientSet full = run({});
  for (const ExpertKey& e : AllExperts(c)) {
    const std::string masked = ExpertGroupId(e);
    const GradientSet partial = run({masked});
    for (const auto& [id, ts] : full.all()) {
      const auto& other = partial.Get(id);
      for (std::size_t t = 0; t < ts.size(); ++t) {
        if (id == masked) {
          for (double v : other[t].values()) ASSERT_EQ(v, 0.0);
        } else {
          ASSERT_TRUE(ts[t] == other[t]) << id << " with " << masked << " masked";
        }
      }
    }
  }
}

TEST(GradientTest, BackwardIsDeterministic) {
  ModelConfig c;
  c.experts_per_layer = 4;
  c.input_dim = 5;
  c.hidden_dim = 6;
  c.expert_hidden_dim = 4;
  MoeModel model(c, 6);
  std::mt19937_64 rng(1);
  Tensor x = RandomTensor({8, 5}, rng);
  std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
  auto run = [&] {
    Tape tape;
    auto fwd = model.Forward(tape, x);
    return tape.Backward(tape.CrossEntropy(fwd.logits, y), model.params());
  };
  const GradientSet a = run();
  const GradientSet b = run();
  EXPECT_TRUE(a.all() == b.all());
}

TEST(SgdTest, ZeroGradientLeavesParams) {
  ParamStore store;
  store.Add(LinearParams("l", Tensor({2, 2}, 0.5), Tensor({2}, 1.0)));
  const ParamStore before = store;
  SgdStep(store, GradientSet(store), 0.1);
  EXPECT_TRUE(store == before);
}

TEST(SgdTest, SingleStepArithmetic) {
  ParamStore store;
  store.Add(ParamGroup{"p", {Tensor({1}, 1.0)}, true});
  GradientSet grads(store);
  grads.Get("p")[0][0] = 2.0;
  SgdStep(store, grads, 0.1);
  EXPECT_NEAR(store.Get("p").tensors[0][0], 0.8, 1e-15);
}

TEST(SgdTest, MaskedGroupUnchanged) {
  ParamStore store;
  store.Add(ParamGroup{"a", {Tensor({2}, 1.0)}, true});
  store.Add(ParamGroup{"b", {Tensor({2}, 1.0)}, true});
  GradientSet grads(store);
  grads.Get("a")[0].Fill(3.0);
  grads.Get("b")[0].Fill(3.0);
  const ParamGroup before = store.Get("b");
  SgdStep(store, grads, 0.5, {"b"});
  EXPECT_TRUE(store.Get("b") == before);
  EXPECT_EQ(store.Get("a").tensors[0][0], -0.5);
}

TEST(SgdTest, RejectsBadInputs) {
  ParamStore store;
  store.Add(ParamGroup{"a", {Tensor({2}, 1.0)}, true});
  GradientSet grads(store);
  EXPECT_THROW(SgdStep(store, grads, 0.0), InputError);
  grads.Get("a")[0][1] = std::nan("");
  const ParamStore before = store;
  EXPECT_THROW(SgdStep(store, grads, 0.1), NumericError);
  EXPECT_TRUE(store == before);
}

TEST(ParamStoreTest, DuplicateIdThrows) {
  ParamStore store;
  store.Add(ParamGroup{"a", {Tensor({1})}, true});
  EXPECT_THROW(store.Add(ParamGroup{"a", {Tensor({1})}, true}), InputError);
  EXPECT_THROW(store.Get("missing"), InputError);
}

}  // namespace
}  // namespace hfedmoe
