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

#include <algorithm>
#include <iostream>
#include <utility>

#include "hfedmoe/errors.h"
#include "hfedmoe/federation.h"

namespace hfedmoe {

double RoutingConsistency(const ExpertSet& client_set,
                          const ExpertSet& global_set) {
  if (global_set.empty()) {
    throw InputError("degenerate round: global dominant set is empty");
  }
  std::size_t overlap = 0;
  for (const ExpertKey& e : client_set) overlap += global_set.count(e);
  return static_cast<double>(overlap) / static_cast<double>(global_set.size());
}

std::vector<double> SampleWeights(std::span<const UpdatePackage> packages) {
  double total = 0.0;
  for (const auto& p : packages) total += static_cast<double>(p.sample_count);
  if (!(total > 0.0)) throw ProtocolError("packages carry no samples");
  std::vector<double> w;
  w.reserve(packages.size());
  for (const auto& p : packages) {
    w.push_back(static_cast<double>(p.sample_count) / total);
  }
  return w;
}

GatingWeights ComputeGatingWeights(std::span<const UpdatePackage> packages,
                                   std::size_t global_dominant_size) {
  GatingWeights out;
  double total = 0.0;
  for (const auto& p : packages) {
    const double a = global_dominant_size
                         ? p.preference_sum /
                               static_cast<double>(global_dominant_size)
                         : 0.0;
    out.raw.push_back(a);
    total += a;
  }
  if (!(total > 0.0)) {
    out.fallback = true;
    out.normalized = SampleWeights(packages);
    return out;
  }
  for (double a : out.raw) out.normalized.push_back(a / total);
  return out;
}

namespace {

void CheckSameShape(const ParamGroup& ref, const ParamGroup& got, int client) {
  if (ref.tensors.size() != got.tensors.size()) {
    throw ProtocolError("client " + std::to_string(client) + " group '" +
                        got.id + "' has wrong tensor count");
  }
  for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
    if (!ref.tensors[i].SameShape(got.tensors[i])) {
      throw ProtocolError("client " + std::to_string(client) + " group '" +
                          got.id + "' tensor " + std::to_string(i) +
                          " has shape " + ShapeToString(got.tensors[i].shape()));
    }
  }
}

// sum_c w_c * groups[c], accumulated in client order from zero.
void WeightedInto(ParamGroup& dst, const std::vector<const ParamGroup*>& groups,
                  const std::vector<double>& weights) {
  for (auto& t : dst.tensors) t.Fill(0.0);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    for (std::size_t i = 0; i < dst.tensors.size(); ++i) {
      auto d = dst.tensors[i].data();
      auto s = groups[c]->tensors[i].data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += weights[c] * s[k];
    }
  }
}

const ParamGroup& FindGroup(const std::vector<ParamGroup>& groups,
                            const std::string& id, int client) {
  for (const auto& g : groups) {
    if (g.id == id) return g;
  }
  throw ProtocolError("client " + std::to_string(client) +
                      " package lacks group '" + id + "'");
}

}  // namespace

ParamStore AggregateExperts(std::span<const UpdatePackage> packages,
                            const ParamStore& global, const ModelConfig& config,
                            double tau) {
  if (packages.empty()) throw InputError("no packages to aggregate");
  ParamStore out = global;
  for (const ExpertKey& e : AllExperts(config)) {
    const std::string id = ExpertGroupId(e);
    std::vector<const ParamGroup*> groups;
    std::vector<double> counts;
    double total = 0.0;
    for (const auto& p : packages) {
      auto u = p.usage.find(e);
      if (u == p.usage.end() || u->second < tau) continue;
      auto g = p.experts.find(e);
      if (g == p.experts.end()) {
        throw ProtocolError("client " + std::to_string(p.client_id) +
                            " reports usage >= tau for " + id +
                            " but did not upload it");
      }
      CheckSameShape(global.Get(id), g->second, p.client_id);
      groups.push_back(&g->second);
      counts.push_back(static_cast<double>(p.sample_count));
      total += static_cast<double>(p.sample_count);
    }
    if (groups.empty()) continue;
    std::vector<double> weights;
    for (double c : counts) weights.push_back(c / total);
    WeightedInto(out.Get(id), groups, weights);
  }
  return out;
}

ParamStore AggregateGating(std::span<const UpdatePackage> packages,
                           const ParamStore& global, const ModelConfig& config,
                           const std::vector<double>& weights) {
  if (packages.empty()) throw InputError("no packages to aggregate");
  if (weights.size() != packages.size()) {
    throw InputError("one gating weight per package required");
  }
  ParamStore out = global;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string id = GateGroupId(l);
    std::vector<const ParamGroup*> groups;
    for (const auto& p : packages) {
      const ParamGroup& g = FindGroup(p.gating, id, p.client_id);
      CheckSameShape(global.Get(id), g, p.client_id);
      groups.push_back(&g);
    }
    WeightedInto(out.Get(id), groups, weights);
  }
  return out;
}

FederationState ServerRound(const FederationState& state,
                            std::span<const UpdatePackage> packages,
                            ServerDiagnostics* diagnostics) {
  FederationState next = state;
  next.round = state.round + 1;
  ServerDiagnostics diag;
  if (packages.empty()) {
    std::cerr << "warning: round " << next.round
              << " received no update packages; global model unchanged\n";
    diag.skipped = true;
    if (diagnostics) *diagnostics = std::move(diag);
    return next;
  }
  const ModelConfig& mc = state.global.config();
  const AggregationPolicy& policy = state.policy;

  ExpertSet global_dominant;
  for (const auto& p : packages) {
    global_dominant.insert(p.dominant_set.begin(), p.dominant_set.end());
  }
  diag.global_dominant_size = global_dominant.size();
  for (const auto& p : packages) {
    diag.routing_consistency.push_back(
        global_dominant.empty() ? 0.0
                                : RoutingConsistency(p.dominant_set,
                                                     global_dominant));
  }

  ParamStore params = AggregateExperts(packages, state.global.params(), mc,
                                       policy.effective_tau());
  if (policy.mode == AggregationMode::kFedAvg) {
    diag.gating.normalized = SampleWeights(packages);
    diag.gating.raw = diag.gating.normalized;
  } else {
    diag.gating = ComputeGatingWeights(packages, global_dominant.size());
    if (diag.gating.fallback) {
      std::cerr << "warning: round " << next.round
                << ": all preference sums are zero, gating falls back to "
                   "sample-count weights\n";
    }
  }
  params = AggregateGating(packages, params, mc, diag.gating.normalized);

  const std::vector<double> sample_w = SampleWeights(packages);
  for (const char* id : {kEmbedGroupId, kHeadGroupId}) {
    std::vector<const ParamGroup*> groups;
    for (const auto& p : packages) {
      const ParamGroup& g = FindGroup(p.shared, id, p.client_id);
      CheckSameShape(params.Get(id), g, p.client_id);
      groups.push_back(&g);
    }
    WeightedInto(params.Get(id), groups, sample_w);
  }
  next.global = MoeModel(mc, std::move(params));
  if (diagnostics) *diagnostics = std::move(diag);
  return next;
}

}  // namespace hfedmoe
