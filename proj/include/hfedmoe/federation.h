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

// Federated rounds over a shared MoE model.
//
// Client side: download the global model, train E local epochs where every
// mini-batch runs an unrestricted forward pass, scores expert importance,
// picks a budget-compliant active expert set and back-propagates into those
// experts only. After training the client measures per-expert usage (mean
// gate score over its data), keeps the experts with usage >= tau as its
// dominant set and uploads them together with gate and shared parameters.
//
// Server side: each expert is averaged over the clients that uploaded it,
// weighted by sample count, and left untouched if nobody did. Gates are
// averaged with weights proportional to each client's summed expert
// preference (usage x importance over its dominant set). Embedding and
// head use plain sample-weighted averaging.

#ifndef HFEDMOE_FEDERATION_H_
#define HFEDMOE_FEDERATION_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hfedmoe/importance.h"
#include "hfedmoe/moe.h"
#include "hfedmoe/params.h"
#include "hfedmoe/selection.h"
#include "hfedmoe/serialization.h"

namespace hfedmoe {

enum class AggregationMode { kHFedMoE, kFedAvg, kRandomDrop, kFreqPrune };

std::string AggregationModeName(AggregationMode mode);
AggregationMode ParseAggregationMode(const std::string& name);

struct AggregationPolicy {
  double tau = 0.05;
  AggregationMode mode = AggregationMode::kHFedMoE;

  // Usage threshold actually applied: FedAvg aggregates every expert.
  double effective_tau() const {
    return mode == AggregationMode::kFedAvg ? 0.0 : tau;
  }
  void Validate() const;
};

struct Dataset {
  // [N x input_dim] or [N x T x input_dim].
  Tensor features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  // Rows `idx` as a batch with the same trailing shape.
  Tensor Batch(std::span<const std::size_t> idx) const;
  std::vector<int> BatchLabels(std::span<const std::size_t> idx) const;
};

struct ClientState {
  int client_id = 0;
  Dataset data;
  ClientBudget budget;
};

struct UpdatePackage {
  int client_id = 0;
  std::int64_t sample_count = 0;
  std::map<ExpertKey, double> usage;
  ExpertSet dominant_set;
  double preference_sum = 0.0;
  std::vector<ParamGroup> gating;   // gate.0 .. gate.L-1
  std::vector<ParamGroup> shared;   // embed, head
  std::map<ExpertKey, ParamGroup> experts;

  friend bool operator==(const UpdatePackage&, const UpdatePackage&) = default;
};

inline constexpr char kPackageFormat[] = "hfedmoe.update_package";
inline constexpr int kPackageVersion = 1;

Json PackageToJson(const UpdatePackage& p);
UpdatePackage PackageFromJson(const Json& j);
void SavePackage(const UpdatePackage& p, const std::string& path);
UpdatePackage LoadPackage(const std::string& path);

struct TrainingConfig {
  int epochs = 1;
  int batch_size = 8;
  double lr = 1e-4;
  ImportanceConfig importance;
  AggregationPolicy policy;
  SortKey sort_key = SortKey::kIbScore;
  // Keep the final-epoch routing records in the result (for audits).
  bool keep_records = false;
};

struct BatchLog {
  int epoch = 0;
  int batch = 0;
  int union_size = 0;
  int active_size = 0;
  int budget = 0;
  double objective = 0.0;
  bool failed = false;
};

struct ClientRoundResult {
  UpdatePackage package;
  MoeModel local_model;
  double mean_loss = 0.0;  // over all batches of the final epoch
  int batches = 0;
  int failure_events = 0;
  std::int64_t compute_proxy = 0;        // sum of |active| over trained batches
  double experts_activated_fraction = 0.0;  // mean |active| / (L*S)
  std::vector<BatchLog> batch_logs;
  ImportanceReport last_report;
  // Running mean of s_combined over the final epoch.
  std::map<ExpertKey, double> mean_importance;
  std::vector<RoutingRecord> final_epoch_records;  // if keep_records
};

// Runs one client's local training from `global` and packages its upload.
// A batch whose union cannot be covered within the budget (or, under FedAvg,
// whose union exceeds the budget) is skipped and counted as a failure.
ClientRoundResult ClientRound(const ClientState& client, const MoeModel& global,
                              const TrainingConfig& cfg, std::uint64_t seed);

// Mean gate score of `e` over every routing unit in `records`.
// Throws InputError when the records hold no units.
double ComputeUsage(std::span<const RoutingRecord> records, const ExpertKey& e);

double RoutingConsistency(const ExpertSet& client_set, const ExpertSet& global_set);

inline double ExpertPreference(double usage, double importance) {
  return usage * importance;
}

// Sample-count weights over `clients` (indices into packages), summing to 1.
std::vector<double> SampleWeights(std::span<const UpdatePackage> packages);

struct GatingWeights {
  std::vector<double> raw;         // preference_sum / |S_global|
  std::vector<double> normalized;  // convex weights actually applied
  bool fallback = false;           // preference sums all zero
};
GatingWeights ComputeGatingWeights(std::span<const UpdatePackage> packages,
                                   std::size_t global_dominant_size);

// Expert groups of `global` replaced by the usage-filtered weighted average.
// Throws ProtocolError on shape mismatches.
ParamStore AggregateExperts(std::span<const UpdatePackage> packages,
                            const ParamStore& global, const ModelConfig& config,
                            double tau);

// Gate groups of `global` replaced by the preference-weighted average.
ParamStore AggregateGating(std::span<const UpdatePackage> packages,
                           const ParamStore& global, const ModelConfig& config,
                           const std::vector<double>& weights);

struct FederationState {
  int round = 0;
  MoeModel global;
  std::vector<ClientBudget> budgets;
  AggregationPolicy policy;
};

struct ServerDiagnostics {
  bool skipped = false;
  std::size_t global_dominant_size = 0;
  std::vector<double> routing_consistency;
  GatingWeights gating;
};

// One synchronous aggregation step. With no packages the round is skipped
// (parameters unchanged, counter still advanced).
FederationState ServerRound(const FederationState& state,
                            std::span<const UpdatePackage> packages,
                            ServerDiagnostics* diagnostics = nullptr);

}  // namespace hfedmoe

#endif  // HFEDMOE_FEDERATION_H_
