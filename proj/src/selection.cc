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

#include "hfedmoe/selection.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "hfedmoe/errors.h"

namespace hfedmoe {

std::string SortKeyName(SortKey key) {
  switch (key) {
    case SortKey::kIbScore:
      return "ib";
    case SortKey::kCombined:
      return "combined";
    case SortKey::kCumulative:
      return "cumulative";
  }
  return "ib";
}

SortKey ParseSortKey(const std::string& name) {
  if (name == "ib") return SortKey::kIbScore;
  if (name == "combined") return SortKey::kCombined;
  if (name == "cumulative") return SortKey::kCumulative;
  throw ConfigError("unknown sort key '" + name + "'");
}

ExpertSet RouteUnion(const RoutingRecord& record) {
  ExpertSet out;
  for (int l = 0; l < record.num_layers; ++l) {
    for (int u = 0; u < record.num_units; ++u) {
      for (int e : record.selection(l, u)) out.insert({l, e});
    }
  }
  return out;
}

double SelectionObjective(const ExpertSet& active,
                          const ImportanceReport& report) {
  double sum = 0.0;
  for (const ExpertKey& e : active) sum += report.at(e).ib_score;
  return sum;
}

namespace {

double KeyScore(const ExpertImportance& imp, SortKey key) {
  switch (key) {
    case SortKey::kIbScore:
      return imp.ib_score;
    case SortKey::kCombined:
      return imp.s_combined;
    case SortKey::kCumulative:
      return imp.s_cumul;
  }
  return imp.ib_score;
}

int CountLayers(const ExpertSet& s) {
  int n = 0;
  int last = -1;
  for (const ExpertKey& e : s) {
    if (e.layer != last) {
      ++n;
      last = e.layer;
    }
  }
  return n;
}

void CheckCoverage(const ExpertSet& union_set, const ClientBudget& budget) {
  const int layers = CountLayers(union_set);
  if (budget.max_active_experts < layers) {
    throw CoverageError("budget of " + std::to_string(budget.max_active_experts) +
                        " experts cannot cover " + std::to_string(layers) +
                        " routed layers");
  }
}

}  // namespace

SelectionResult SelectActive(const ExpertSet& union_set,
                             const ImportanceReport& report,
                             const ClientBudget& budget, SortKey key) {
  CheckCoverage(union_set, budget);
  SelectionResult result;
  result.union_set = union_set;
  const auto cap = static_cast<std::size_t>(budget.max_active_experts);

  // Descending score, ties by (layer, index) ascending.
  std::vector<ExpertKey> order(union_set.begin(), union_set.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](const ExpertKey& a, const ExpertKey& b) {
                     return KeyScore(report.at(a), key) >
                            KeyScore(report.at(b), key);
                   });

  // Layer-wise coverage: first occurrence of each layer in the ranking.
  std::map<int, bool> covered;
  for (const ExpertKey& e : order) {
    if (covered.emplace(e.layer, true).second) result.active.insert(e);
  }
  for (const ExpertKey& e : order) {
    if (result.active.size() >= cap) break;
    if (result.active.count(e)) continue;
    if (KeyScore(report.at(e), key) < 0.0) break;
    result.active.insert(e);
  }
  result.objective_value = SelectionObjective(result.active, report);
  return result;
}

SelectionResult SelectRandom(const ExpertSet& union_set,
                             const ImportanceReport& report,
                             const ClientBudget& budget, std::mt19937_64& rng) {
  CheckCoverage(union_set, budget);
  SelectionResult result;
  result.union_set = union_set;
  const std::size_t target = std::min(
      union_set.size(), static_cast<std::size_t>(budget.max_active_experts));

  std::map<int, std::vector<ExpertKey>> by_layer;
  for (const ExpertKey& e : union_set) by_layer[e.layer].push_back(e);
  for (const auto& [layer, members] : by_layer) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    result.active.insert(members[pick(rng)]);
  }
  std::vector<ExpertKey> rest;
  for (const ExpertKey& e : union_set) {
    if (!result.active.count(e)) rest.push_back(e);
  }
  // Partial Fisher-Yates with an explicit distribution for reproducibility.
  for (std::size_t i = 0; result.active.size() < target; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
    std::swap(rest[i], rest[pick(rng)]);
    result.active.insert(rest[i]);
  }
  result.objective_value = SelectionObjective(result.active, report);
  return result;
}

GradientMask GradientMaskFor(const ExpertSet& active, const ModelConfig& config) {
  GradientMask mask;
  for (const ExpertKey& e : AllExperts(config)) {
    if (!active.count(e)) mask.insert(ExpertGroupId(e));
  }
  return mask;
}

int MemoryToBudget(double memory_gb, const CostModel& cost,
                   const ModelConfig& config) {
  if (!(cost.per_expert_gb > 0.0)) {
    throw ConfigError("per-expert memory cost must be positive");
  }
  if (!(memory_gb > cost.base_gb)) {
    throw InfeasibleClientError("memory of " + std::to_string(memory_gb) +
                                " GB does not exceed the base cost of " +
                                std::to_string(cost.base_gb) + " GB");
  }
  const double raw = std::floor((memory_gb - cost.base_gb) / cost.per_expert_gb);
  const double lo = config.num_layers;
  const double hi = config.num_experts();
  return static_cast<int>(std::clamp(raw, lo, hi));
}

void WriteSelectionCsvHeader(std::ostream& os) {
  os << "round,client,batch,union,active,budget,objective\n";
}

}  // namespace hfedmoe
