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

// Budget-constrained expert re-scheduling for the backward pass.
//
// The forward pass routes every unit to its own top-k experts; the union of
// those experts over the batch is the candidate set. Under a budget of at
// most C distinct experts per batch, the active set is built by
//   1. taking the best-scoring candidate of every layer that has one, then
//   2. adding the best remaining candidates regardless of layer until the
//      budget is reached or only negative scores remain.
// With the IB score as key this maximizes the summed IB score over all
// subsets that cover every routed layer and fit the budget.

#ifndef HFEDMOE_SELECTION_H_
#define HFEDMOE_SELECTION_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>

#include "hfedmoe/importance.h"
#include "hfedmoe/moe.h"
#include "hfedmoe/params.h"

namespace hfedmoe {

struct ClientBudget {
  int max_active_experts = 0;
  // Only used to derive max_active_experts.
  std::optional<double> memory_gb;
};

struct CostModel {
  double base_gb = 10.0;
  double per_expert_gb = 0.5;
};

// Ranking key used by the greedy. kIbScore is the default; kCombined ranks by
// the combined importance alone; kCumulative ranks by mean gate score
// (activation-frequency pruning baseline).
enum class SortKey { kIbScore, kCombined, kCumulative };

std::string SortKeyName(SortKey key);
SortKey ParseSortKey(const std::string& name);

struct SelectionResult {
  ExpertSet union_set;
  ExpertSet active;
  // Sum of ib_score over `active`, accumulated in (layer, index) order.
  double objective_value = 0.0;
};

// Union over units and layers of the forward top-k selections.
ExpertSet RouteUnion(const RoutingRecord& record);

// Throws CoverageError if the budget is smaller than the number of layers
// represented in `union_set`.
SelectionResult SelectActive(const ExpertSet& union_set,
                             const ImportanceReport& report,
                             const ClientBudget& budget,
                             SortKey key = SortKey::kIbScore);

// Uniformly random coverage-feasible subset with min(budget, |union|)
// members: one random expert per routed layer, then random fill.
SelectionResult SelectRandom(const ExpertSet& union_set,
                             const ImportanceReport& report,
                             const ClientBudget& budget, std::mt19937_64& rng);

// Sum of ib_score over `active` in key order.
double SelectionObjective(const ExpertSet& active, const ImportanceReport& report);

// Expert parameter groups outside the active set. Gate, embedding and head
// groups are never masked.
GradientMask GradientMaskFor(const ExpertSet& active, const ModelConfig& config);

// floor((memory - base) / per_expert) clamped to [L, L*S]. Throws
// InfeasibleClientError when memory_gb <= base.
int MemoryToBudget(double memory_gb, const CostModel& cost,
                   const ModelConfig& config);

// CSV: round,client,batch,union,active,budget,objective
void WriteSelectionCsvHeader(std::ostream& os);

}  // namespace hfedmoe

#endif  // HFEDMOE_SELECTION_H_
