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

// Mixture-of-experts classifier.
//
//   x -> tanh(embed) -> [MoE layer + residual] x L -> (mean pool) -> head
//
// Each MoE layer holds a linear gate producing S logits and S two-layer tanh
// MLP experts. Gate scores are a full softmax over all S experts; each routing
// unit is sent to its top-k experts and the layer output is
//   y = sum_{e in top-k} G_e(x) * E_e(x).

#ifndef HFEDMOE_MOE_H_
#define HFEDMOE_MOE_H_

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hfedmoe/autograd.h"
#include "hfedmoe/params.h"
#include "hfedmoe/tensor.h"

namespace hfedmoe {

enum class RoutingUnit { kPerSample, kPerToken };

std::string RoutingUnitName(RoutingUnit unit);
RoutingUnit ParseRoutingUnit(const std::string& name);

struct ModelConfig {
  int num_layers = 2;
  int experts_per_layer = 8;
  int top_k = 1;
  int input_dim = 16;
  int hidden_dim = 32;
  int expert_hidden_dim = 32;
  int output_dim = 4;
  RoutingUnit routing_unit = RoutingUnit::kPerSample;
  // Tokens per sample when routing_unit == kPerToken.
  int tokens_per_sample = 1;

  int num_experts() const { return num_layers * experts_per_layer; }
  int units_per_sample() const {
    return routing_unit == RoutingUnit::kPerToken ? tokens_per_sample : 1;
  }

  // Throws ConfigError when a field is out of range (k > S, k < 1, ...).
  void Validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExpertKey {
  int layer = 0;
  int index = 0;

  friend auto operator<=>(const ExpertKey&, const ExpertKey&) = default;
};

using ExpertSet = std::set<ExpertKey>;

std::string ExpertGroupId(const ExpertKey& key);
std::string GateGroupId(int layer);
inline constexpr char kEmbedGroupId[] = "embed";
inline constexpr char kHeadGroupId[] = "head";

// Every expert key of the model in (layer, index) order.
std::vector<ExpertKey> AllExperts(const ModelConfig& config);

// Post-softmax gate scores and top-k selections captured in one forward pass.
struct RoutingRecord {
  int num_layers = 0;
  int num_units = 0;
  int num_experts = 0;  // per layer (S)
  int top_k = 0;
  // [layer][unit][expert], row-major.
  std::vector<double> scores;
  // [layer][unit][k] expert indices, descending score.
  std::vector<int> selected;

  double score(int layer, int unit, int expert) const {
    return scores[(static_cast<std::size_t>(layer) * num_units + unit) *
                      num_experts + expert];
  }
  double score(const ExpertKey& e, int unit) const {
    return score(e.layer, unit, e.index);
  }
  std::span<const int> selection(int layer, int unit) const {
    return std::span<const int>(selected).subspan(
        (static_cast<std::size_t>(layer) * num_units + unit) * top_k, top_k);
  }
};

// Indices of the k largest entries, largest first; ties go to the smaller
// index. Throws ConfigError if k > size or k < 1.
std::vector<int> TopKRoute(std::span<const double> gate_row, int k);

struct ForwardOutput {
  Var logits;
  RoutingRecord record;
  // Experts actually used per [layer][unit]; differs from record.selected
  // only when a routing restriction was applied.
  std::vector<std::vector<std::vector<int>>> routed;
};

struct LayerOutput {
  Var output;     // sum of gated expert outputs (no residual)
  Var gates;      // full softmax over S, [U x S]
  std::vector<std::vector<int>> routed;  // per unit
};

class MoeModel {
 public:
  MoeModel() = default;
  // Parameters drawn from a fixed-seed uniform(-1/sqrt(fan_in), +) scheme.
  MoeModel(ModelConfig config, std::uint64_t seed);
  MoeModel(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  // Records the forward pass on `tape`. `batch` is [B x input_dim] for
  // per-sample routing or [B x T x input_dim] for per-token routing.
  // `active_override` restricts routing to the given experts with gates
  // renormalized over the restriction; it must name >= 1 expert per layer
  // (CoverageError otherwise). The returned record always holds the
  // unrestricted scores and selections.
  ForwardOutput Forward(Tape& tape, const Tensor& batch,
                        const ExpertSet* active_override = nullptr) const;

  // One MoE layer on [U x hidden] units.
  LayerOutput ForwardLayer(Tape& tape, int layer, Var units,
                           const std::vector<bool>* allowed = nullptr) const;

  // Evaluation helpers (no gradient needed).
  Tensor Logits(const Tensor& batch) const;

  friend bool operator==(const MoeModel& a, const MoeModel& b) {
    return a.config_ == b.config_ && a.params_ == b.params_;
  }

 private:
  void CheckStructure() const;

  ModelConfig config_;
  ParamStore params_;
};

// Convenience wrapper: forward value plus routing record.
struct MoeForwardResult {
  Tensor output;
  RoutingRecord record;
};
MoeForwardResult MoeForward(const Tensor& batch, const MoeModel& model,
                            const ExpertSet* active_override = nullptr);

}  // namespace hfedmoe

#endif  // HFEDMOE_MOE_H_
