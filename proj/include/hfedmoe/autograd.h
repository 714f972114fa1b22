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

// Reverse-mode gradient tape.
//
// A Tape records one forward computation as a list of nodes in creation
// order. Backward walks the list in reverse, so accumulation order is fixed
// and two runs over the same inputs produce bitwise identical gradients.
//
// Masking happens at the parameter-group boundary: a parameter leaf whose
// group is masked never requests a gradient, so the weight-gradient products
// feeding it are skipped entirely. Gradients with respect to activations
// still flow through masked experts, which keeps every other group's
// gradient identical to the unmasked run.
//
// A tape is single use. After Backward the graph is released.

#ifndef HFEDMOE_AUTOGRAD_H_
#define HFEDMOE_AUTOGRAD_H_

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hfedmoe/params.h"
#include "hfedmoe/tensor.h"

namespace hfedmoe {

struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

struct LossValue {
  double scalar = 0.0;
  std::size_t batch_size = 0;
  Var var;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var Constant(Tensor value);
  // Binds tensor `index` of `group` as a leaf. `group` must outlive the tape
  // and stay unmodified until Backward returns.
  Var Parameter(const ParamGroup& group, std::size_t index);

  // x[n x in] . w[in x out] + b[out].
  Var Linear(Var x, Var w, Var b);
  Var Tanh(Var x);
  // Row-wise softmax with max subtraction.
  Var Softmax(Var x);
  // Row-wise softmax restricted to columns with allowed[c] == true; other
  // columns are exactly zero. At least one column must be allowed.
  Var MaskedSoftmax(Var x, std::vector<bool> allowed);
  // Rows of x selected by index, in the given order.
  Var GatherRows(Var x, std::vector<std::size_t> rows);
  // Column vector [n x 1] of x[rows[i], col].
  Var GatherEntries(Var x, std::vector<std::size_t> rows, std::size_t col);
  // out[i, :] = scale[i] * x[i, :], scale is [n x 1].
  Var ScaleRows(Var x, Var scale);
  // Zero [out_rows x D] tensor with parts[p] row r added at rows[p][r].
  // Parts are accumulated in the given order.
  Var ScatterSum(std::vector<Var> parts, std::vector<std::vector<std::size_t>> rows,
                 std::size_t out_rows, std::size_t width);
  Var Add(Var a, Var b);
  // [n*group x D] -> [n x D], averaging consecutive blocks of `group` rows.
  Var MeanPoolRows(Var x, std::size_t group);
  // Mean negative log-likelihood over the batch. Labels must lie in [0, C).
  LossValue CrossEntropy(Var logits, std::span<const int> labels);

  const Tensor& value(Var v) const;
  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Gradients of the scalar `loss` for every group of `params`. Groups that
  // are masked, untrainable or never reached come back as exact zeros.
  // Throws StateError if nothing was recorded or the tape was already used.
  GradientSet Backward(const LossValue& loss, const ParamStore& params,
                       const GradientMask& mask = {});

 private:
  using BackwardFn = std::function<void(const Tape&, const Tensor& dout,
                                        std::span<Tensor* const> dparents)>;
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    const ParamGroup* group = nullptr;
    std::size_t tensor_index = 0;
  };

  Var Push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);
  const Node& node(Var v) const;
  void CheckLive() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Binds a {W, b} group and applies it to `input`. Throws DimensionError if
// the group does not hold exactly a 2-D weight and a 1-D bias that conform.
Var ForwardLinear(Tape& tape, Var input, const ParamGroup& group);

// Plain-value helpers used outside of training (evaluation, importance).
Tensor SoftmaxRows(const Tensor& scores);
// Mean cross-entropy of logits against labels.
double CrossEntropyValue(const Tensor& logits, std::span<const int> labels);

}  // namespace hfedmoe

#endif  // HFEDMOE_AUTOGRAD_H_
