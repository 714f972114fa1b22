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

#include "hfedmoe/autograd.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "hfedmoe/errors.h"

namespace hfedmoe {

namespace {

void RequireMatrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be 2-D, got " +
                         ShapeToString(t.shape()));
  }
}

// Softmax of one row into `out`, restricted to allowed columns if given.
void SoftmaxRow(std::span<const double> in, std::span<double> out,
                const std::vector<bool>* allowed) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < in.size(); ++j) {
    if (allowed && !(*allowed)[j]) continue;
    mx = std::max(mx, in[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    if (allowed && !(*allowed)[j]) {
      out[j] = 0.0;
      continue;
    }
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < in.size(); ++j) out[j] /= sum;
}

}  // namespace

Var Tape::Push(Tensor value, std::vector<std::size_t> parents,
               BackwardFn backward) {
  CheckLive();
  if (!value.AllFinite()) {
    throw NumericError("non-finite value produced on tape");
  }
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::CheckLive() const {
  if (consumed_) throw StateError("tape already consumed by Backward");
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw StateError("variable does not belong to this tape");
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

Var Tape::Constant(Tensor value) { return Push(std::move(value), {}, nullptr); }

Var Tape::Parameter(const ParamGroup& group, std::size_t index) {
  CheckLive();
  if (index >= group.tensors.size()) {
    throw InputError("group '" + group.id + "' has no tensor " +
                     std::to_string(index));
  }
  Node n;
  n.external = &group.tensors[index];
  n.group = &group;
  n.tensor_index = index;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::Linear(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  RequireMatrix(xv, "linear input");
  RequireMatrix(wv, "linear weight");
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  if (wv.dim(0) != in || bv.size() != out) {
    throw DimensionError("linear shapes do not conform: x" +
                         ShapeToString(xv.shape()) + " W" +
                         ShapeToString(wv.shape()) + " b" +
                         ShapeToString(bv.shape()));
  }
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out; ++j) y.at(i, j) = bv[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xv.at(i, k);
      for (std::size_t j = 0; j < out; ++j) y.at(i, j) += a * wv.at(k, j);
    }
  }
  const std::size_t xi = x.id, wi = w.id;
  return Push(std::move(y), {x.id, w.id, b.id},
              [xi, wi, n, in, out](const Tape& t, const Tensor& dy,
                                   std::span<Tensor* const> dp) {
                const Tensor& xv = t.value(Var{xi});
                const Tensor& wv = t.value(Var{wi});
                if (Tensor* dx = dp[0]) {
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t k = 0; k < in; ++k) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < out; ++j) {
                        acc += dy.at(i, j) * wv.at(k, j);
                      }
                      dx->at(i, k) += acc;
                    }
                  }
                }
                if (Tensor* dw = dp[1]) {
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t k = 0; k < in; ++k) {
                      const double a = xv.at(i, k);
                      for (std::size_t j = 0; j < out; ++j) {
                        dw->at(k, j) += a * dy.at(i, j);
                      }
                    }
                  }
                }
                if (Tensor* db = dp[2]) {
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < out; ++j) (*db)[j] += dy.at(i, j);
                  }
                }
              });
}

Var Tape::Tanh(Var x) {
  Tensor y = value(x);
  for (double& v : y.data()) v = std::tanh(v);
  const std::size_t self = nodes_.size();
  return Push(std::move(y), {x.id},
              [self](const Tape& t, const Tensor& dy,
                     std::span<Tensor* const> dp) {
                if (!dp[0]) return;
                const Tensor& yv = t.value(Var{self});
                for (std::size_t i = 0; i < yv.size(); ++i) {
                  (*dp[0])[i] += dy[i] * (1.0 - yv[i] * yv[i]);
                }
              });
}

namespace {

void SoftmaxBackward(const Tensor& y, const Tensor& dy, Tensor& dx) {
  const std::size_t n = y.rows(), s = y.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < s; ++j) dot += dy.at(i, j) * y.at(i, j);
    for (std::size_t j = 0; j < s; ++j) {
      dx.at(i, j) += y.at(i, j) * (dy.at(i, j) - dot);
    }
  }
}

}  // namespace

Var Tape::Softmax(Var x) {
  const Tensor& xv = value(x);
  RequireMatrix(xv, "softmax input");
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    SoftmaxRow(xv.row(i), y.row(i), nullptr);
  }
  const std::size_t self = nodes_.size();
  return Push(std::move(y), {x.id},
              [self](const Tape& t, const Tensor& dy,
                     std::span<Tensor* const> dp) {
                if (dp[0]) SoftmaxBackward(t.value(Var{self}), dy, *dp[0]);
              });
}

Var Tape::MaskedSoftmax(Var x, std::vector<bool> allowed) {
  const Tensor& xv = value(x);
  RequireMatrix(xv, "softmax input");
  if (allowed.size() != xv.cols()) {
    throw DimensionError("softmax column mask has wrong width");
  }
  if (std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; })) {
    throw CoverageError("masked softmax with no allowed column");
  }
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    SoftmaxRow(xv.row(i), y.row(i), &allowed);
  }
  const std::size_t self = nodes_.size();
  return Push(std::move(y), {x.id},
              [self](const Tape& t, const Tensor& dy,
                     std::span<Tensor* const> dp) {
                if (dp[0]) SoftmaxBackward(t.value(Var{self}), dy, *dp[0]);
              });
}

Var Tape::GatherRows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = value(x);
  RequireMatrix(xv, "gather input");
  if (rows.empty()) throw DimensionError("gather with no rows");
  const std::size_t d = xv.cols();
  Tensor y({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) throw DimensionError("gather row out of range");
    std::copy(xv.row(rows[r]).begin(), xv.row(rows[r]).end(), y.row(r).begin());
  }
  return Push(std::move(y), {x.id},
              [rows = std::move(rows), d](const Tape&, const Tensor& dy,
                                          std::span<Tensor* const> dp) {
                if (!dp[0]) return;
                for (std::size_t r = 0; r < rows.size(); ++r) {
                  for (std::size_t j = 0; j < d; ++j) {
                    dp[0]->at(rows[r], j) += dy.at(r, j);
                  }
                }
              });
}

Var Tape::GatherEntries(Var x, std::vector<std::size_t> rows, std::size_t col) {
  const Tensor& xv = value(x);
  RequireMatrix(xv, "gather input");
  if (rows.empty()) throw DimensionError("gather with no rows");
  if (col >= xv.cols()) throw DimensionError("gather column out of range");
  Tensor y({rows.size(), 1});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) throw DimensionError("gather row out of range");
    y[r] = xv.at(rows[r], col);
  }
  return Push(std::move(y), {x.id},
              [rows = std::move(rows), col](const Tape&, const Tensor& dy,
                                            std::span<Tensor* const> dp) {
                if (!dp[0]) return;
                for (std::size_t r = 0; r < rows.size(); ++r) {
                  dp[0]->at(rows[r], col) += dy[r];
                }
              });
}

Var Tape::ScaleRows(Var x, Var scale) {
  const Tensor& xv = value(x);
  const Tensor& sv = value(scale);
  RequireMatrix(xv, "scale input");
  if (sv.size() != xv.rows()) throw DimensionError("row scale length mismatch");
  Tensor y = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) *= sv[i];
  }
  const std::size_t xi = x.id, si = scale.id;
  return Push(std::move(y), {x.id, scale.id},
              [xi, si, n, d](const Tape& t, const Tensor& dy,
                             std::span<Tensor* const> dp) {
                const Tensor& xv = t.value(Var{xi});
                const Tensor& sv = t.value(Var{si});
                if (dp[0]) {
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                      dp[0]->at(i, j) += dy.at(i, j) * sv[i];
                    }
                  }
                }
                if (dp[1]) {
                  for (std::size_t i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      acc += dy.at(i, j) * xv.at(i, j);
                    }
                    (*dp[1])[i] += acc;
                  }
                }
              });
}

Var Tape::ScatterSum(std::vector<Var> parts,
                     std::vector<std::vector<std::size_t>> rows,
                     std::size_t out_rows, std::size_t width) {
  if (parts.size() != rows.size()) {
    throw DimensionError("scatter parts/rows length mismatch");
  }
  Tensor y({out_rows, width}, 0.0);
  std::vector<std::size_t> parent_ids;
  parent_ids.reserve(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& pv = value(parts[p]);
    if (pv.rank() != 2 || pv.dim(0) != rows[p].size() || pv.dim(1) != width) {
      throw DimensionError("scatter part shape mismatch");
    }
    for (std::size_t r = 0; r < rows[p].size(); ++r) {
      if (rows[p][r] >= out_rows) throw DimensionError("scatter row out of range");
      for (std::size_t j = 0; j < width; ++j) {
        y.at(rows[p][r], j) += pv.at(r, j);
      }
    }
    parent_ids.push_back(parts[p].id);
  }
  return Push(std::move(y), std::move(parent_ids),
              [rows = std::move(rows), width](const Tape&, const Tensor& dy,
                                              std::span<Tensor* const> dp) {
                for (std::size_t p = 0; p < rows.size(); ++p) {
                  if (!dp[p]) continue;
                  for (std::size_t r = 0; r < rows[p].size(); ++r) {
                    for (std::size_t j = 0; j < width; ++j) {
                      dp[p]->at(r, j) += dy.at(rows[p][r], j);
                    }
                  }
                }
              });
}

Var Tape::Add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.SameShape(bv)) {
    throw DimensionError("add shape mismatch " + ShapeToString(av.shape()) +
                         " vs " + ShapeToString(bv.shape()));
  }
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return Push(std::move(y), {a.id, b.id},
              [](const Tape&, const Tensor& dy, std::span<Tensor* const> dp) {
                for (Tensor* d : dp) {
                  if (!d) continue;
                  for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i];
                }
              });
}

Var Tape::MeanPoolRows(Var x, std::size_t group) {
  const Tensor& xv = value(x);
  RequireMatrix(xv, "pool input");
  if (group == 0 || xv.rows() % group != 0) {
    throw DimensionError("pool group does not divide row count");
  }
  const std::size_t n = xv.rows() / group, d = xv.cols();
  Tensor y({n, d}, 0.0);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < group; ++g) {
      for (std::size_t j = 0; j < d; ++j) y.at(i, j) += xv.at(i * group + g, j);
    }
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) *= inv;
  }
  return Push(std::move(y), {x.id},
              [n, d, group, inv](const Tape&, const Tensor& dy,
                                 std::span<Tensor* const> dp) {
                if (!dp[0]) return;
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t g = 0; g < group; ++g) {
                    for (std::size_t j = 0; j < d; ++j) {
                      dp[0]->at(i * group + g, j) += dy.at(i, j) * inv;
                    }
                  }
                }
              });
}

LossValue Tape::CrossEntropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = value(logits);
  RequireMatrix(lv, "logits");
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) throw DimensionError("label count != batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InputError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  Tensor probs = SoftmaxRows(lv);
  const double loss = CrossEntropyValue(lv, labels);
  std::vector<int> owned(labels.begin(), labels.end());
  Var v = Push(Tensor({1}, loss), {logits.id},
               [probs = std::move(probs), owned = std::move(owned), n, c](
                   const Tape&, const Tensor& dy, std::span<Tensor* const> dp) {
                 if (!dp[0]) return;
                 const double scale = dy[0] / static_cast<double>(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   for (std::size_t j = 0; j < c; ++j) {
                     const double target =
                         static_cast<std::size_t>(owned[i]) == j ? 1.0 : 0.0;
                     dp[0]->at(i, j) += (probs.at(i, j) - target) * scale;
                   }
                 }
               });
  return LossValue{loss, n, v};
}

GradientSet Tape::Backward(const LossValue& loss, const ParamStore& params,
                           const GradientMask& mask) {
  if (consumed_) throw StateError("backward called twice on one tape");
  if (nodes_.empty() || !loss.var.valid() || loss.var.id >= nodes_.size()) {
    throw StateError("backward without a recorded forward graph");
  }
  if (value(loss.var).size() != 1) throw StateError("backward from non-scalar");

  const std::size_t top = loss.var.id;
  std::vector<bool> needs(top + 1, false);
  for (std::size_t i = 0; i <= top; ++i) {
    const Node& n = nodes_[i];
    if (n.group) {
      needs[i] = n.group->trainable && !mask.count(n.group->id);
    } else {
      for (std::size_t p : n.parents) needs[i] = needs[i] || needs[p];
    }
  }

  GradientSet grads(params);
  std::vector<Tensor> node_grads(top + 1);
  node_grads[top] = Tensor({1}, 1.0);
  std::vector<Tensor*> dparents;
  for (std::size_t i = top + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!needs[i] || node_grads[i].empty()) continue;
    if (n.group) {
      if (!grads.Contains(n.group->id)) {
        throw StateError("parameter group '" + n.group->id +
                         "' is not part of the supplied store");
      }
      Tensor& g = grads.Get(n.group->id)[n.tensor_index];
      const Tensor& src = node_grads[i];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
      continue;
    }
    if (!n.backward) continue;
    dparents.assign(n.parents.size(), nullptr);
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      const std::size_t pid = n.parents[p];
      if (!needs[pid]) continue;
      if (node_grads[pid].empty()) {
        node_grads[pid] = Tensor(value(Var{pid}).shape(), 0.0);
      }
      dparents[p] = &node_grads[pid];
    }
    n.backward(*this, node_grads[i], dparents);
    node_grads[i] = Tensor();
  }
  nodes_.clear();
  consumed_ = true;
  return grads;
}

Var ForwardLinear(Tape& tape, Var input, const ParamGroup& group) {
  if (group.tensors.size() != 2 || group.tensors[0].rank() != 2 ||
      group.tensors[1].rank() != 1) {
    throw DimensionError("group '" + group.id + "' is not a {W, b} linear map");
  }
  Var w = tape.Parameter(group, 0);
  Var b = tape.Parameter(group, 1);
  return tape.Linear(input, w, b);
}

Tensor SoftmaxRows(const Tensor& scores) {
  RequireMatrix(scores, "softmax input");
  if (!scores.AllFinite()) throw NumericError("softmax of non-finite scores");
  Tensor y(scores.shape());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    SoftmaxRow(scores.row(i), y.row(i), nullptr);
  }
  return y;
}

double CrossEntropyValue(const Tensor& logits, std::span<const int> labels) {
  RequireMatrix(logits, "logits");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw DimensionError("label count != batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InputError("label " + std::to_string(y) + " out of range");
    }
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += (mx + std::log(sum)) - row[static_cast<std::size_t>(y)];
  }
  return total / static_cast<double>(n);
}

}  // namespace hfedmoe
