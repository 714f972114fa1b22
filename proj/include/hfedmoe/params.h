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

#ifndef HFEDMOE_PARAMS_H_
#define HFEDMOE_PARAMS_H_

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hfedmoe/tensor.h"

namespace hfedmoe {

// A named bundle of parameter tensors; the unit of gradient masking.
struct ParamGroup {
  std::string id;
  std::vector<Tensor> tensors;
  bool trainable = true;

  friend bool operator==(const ParamGroup&, const ParamGroup&) = default;
};

// Ids of groups whose gradients are suppressed for one backward pass.
using GradientMask = std::set<std::string>;

// Ordered collection of parameter groups with unique ids. Iteration order is
// insertion order, which fixes serialization and accumulation order.
class ParamStore {
 public:
  // Throws InputError on duplicate id.
  void Add(ParamGroup group);

  bool Contains(const std::string& id) const;
  const ParamGroup& Get(const std::string& id) const;
  ParamGroup& Get(const std::string& id);

  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  std::size_t size() const { return groups_.size(); }

  std::size_t NumScalars() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.groups_ == b.groups_;
  }

 private:
  std::vector<ParamGroup> groups_;
  std::map<std::string, std::size_t> index_;
};

// Gradients keyed by group id, one tensor per group tensor.
class GradientSet {
 public:
  GradientSet() = default;
  // Zero gradients shaped like every group in `params`.
  explicit GradientSet(const ParamStore& params);

  bool Contains(const std::string& id) const { return grads_.count(id) > 0; }
  const std::vector<Tensor>& Get(const std::string& id) const;
  std::vector<Tensor>& Get(const std::string& id);
  const std::map<std::string, std::vector<Tensor>>& all() const {
    return grads_;
  }

 private:
  std::map<std::string, std::vector<Tensor>> grads_;
};

// p <- p - lr * g for every trainable group not in `mask`. Masked groups are
// left bitwise untouched. Throws InputError for lr <= 0 and NumericError if
// an applied gradient is non-finite.
void SgdStep(ParamStore& params, const GradientSet& grads, double lr,
             const GradientMask& mask = {});

}  // namespace hfedmoe

#endif  // HFEDMOE_PARAMS_H_
