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

#include "hfedmoe/params.h"

#include <utility>

#include "hfedmoe/errors.h"

namespace hfedmoe {

void ParamStore::Add(ParamGroup group) {
  if (index_.count(group.id)) {
    throw InputError("duplicate parameter group id '" + group.id + "'");
  }
  index_.emplace(group.id, groups_.size());
  groups_.push_back(std::move(group));
}

bool ParamStore::Contains(const std::string& id) const {
  return index_.count(id) > 0;
}

const ParamGroup& ParamStore::Get(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InputError("unknown parameter group '" + id + "'");
  return groups_[it->second];
}

ParamGroup& ParamStore::Get(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw InputError("unknown parameter group '" + id + "'");
  return groups_[it->second];
}

std::size_t ParamStore::NumScalars() const {
  std::size_t n = 0;
  for (const auto& g : groups_) {
    for (const auto& t : g.tensors) n += t.size();
  }
  return n;
}

GradientSet::GradientSet(const ParamStore& params) {
  for (const auto& g : params.groups()) {
    std::vector<Tensor> zeros;
    zeros.reserve(g.tensors.size());
    for (const auto& t : g.tensors) zeros.emplace_back(t.shape(), 0.0);
    grads_.emplace(g.id, std::move(zeros));
  }
}

const std::vector<Tensor>& GradientSet::Get(const std::string& id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw InputError("no gradient for group '" + id + "'");
  return it->second;
}

std::vector<Tensor>& GradientSet::Get(const std::string& id) {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw InputError("no gradient for group '" + id + "'");
  return it->second;
}

void SgdStep(ParamStore& params, const GradientSet& grads, double lr,
             const GradientMask& mask) {
  if (!(lr > 0.0)) throw InputError("learning rate must be positive");
  // Validate everything first so a failed step leaves params untouched.
  for (const auto& g : params.groups()) {
    if (!g.trainable || mask.count(g.id) || !grads.Contains(g.id)) continue;
    const auto& gt = grads.Get(g.id);
    if (gt.size() != g.tensors.size()) {
      throw DimensionError("gradient arity mismatch for group '" + g.id + "'");
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!gt[i].SameShape(g.tensors[i])) {
        throw DimensionError("gradient shape mismatch for group '" + g.id + "'");
      }
      if (!gt[i].AllFinite()) {
        throw NumericError("non-finite gradient in group '" + g.id + "'");
      }
    }
  }
  for (auto& g : params.groups()) {
    if (!g.trainable || mask.count(g.id) || !grads.Contains(g.id)) continue;
    const auto& gt = grads.Get(g.id);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      auto p = g.tensors[i].data();
      auto d = gt[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * d[j];
    }
  }
}

}  // namespace hfedmoe
