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

#include "hfedmoe/moe.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

#include "hfedmoe/errors.h"

namespace hfedmoe {

std::string RoutingUnitName(RoutingUnit unit) {
  return unit == RoutingUnit::kPerToken ? "per_token" : "per_sample";
}

RoutingUnit ParseRoutingUnit(const std::string& name) {
  if (name == "per_sample") return RoutingUnit::kPerSample;
  if (name == "per_token") return RoutingUnit::kPerToken;
  throw ConfigError("unknown routing_unit '" + name + "'");
}

void ModelConfig::Validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(experts_per_layer, "experts_per_layer");
  positive(top_k, "top_k");
  positive(input_dim, "input_dim");
  positive(hidden_dim, "hidden_dim");
  positive(expert_hidden_dim, "expert_hidden_dim");
  positive(output_dim, "output_dim");
  positive(tokens_per_sample, "tokens_per_sample");
  if (top_k > experts_per_layer) {
    throw ConfigError("top_k (" + std::to_string(top_k) +
                      ") exceeds experts_per_layer (" +
                      std::to_string(experts_per_layer) + ")");
  }
}

std::string ExpertGroupId(const ExpertKey& key) {
  return "expert." + std::to_string(key.layer) + "." + std::to_string(key.index);
}

std::string GateGroupId(int layer) { return "gate." + std::to_string(layer); }

std::vector<ExpertKey> AllExperts(const ModelConfig& config) {
  std::vector<ExpertKey> keys;
  keys.reserve(static_cast<std::size_t>(config.num_experts()));
  for (int l = 0; l < config.num_layers; ++l) {
    for (int s = 0; s < config.experts_per_layer; ++s) keys.push_back({l, s});
  }
  return keys;
}

std::vector<int> TopKRoute(std::span<const double> gate_row, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > gate_row.size()) {
    throw ConfigError("top-k with k=" + std::to_string(k) + " over " +
                      std::to_string(gate_row.size()) + " experts");
  }
  std::vector<int> idx(gate_row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (gate_row[a] != gate_row[b]) return gate_row[a] > gate_row[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

namespace {

ParamGroup LinearGroup(std::string id, int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
  for (double& v : w.data()) v = dist(rng);
  Tensor b({static_cast<std::size_t>(out)}, 0.0);
  return ParamGroup{std::move(id), {std::move(w), std::move(b)}, true};
}

}  // namespace

MoeModel::MoeModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.Validate();
  std::mt19937_64 rng(seed);
  params_.Add(LinearGroup(kEmbedGroupId, config_.input_dim, config_.hidden_dim,
                          rng));
  for (int l = 0; l < config_.num_layers; ++l) {
    params_.Add(LinearGroup(GateGroupId(l), config_.hidden_dim,
                            config_.experts_per_layer, rng));
    for (int s = 0; s < config_.experts_per_layer; ++s) {
      ParamGroup fc1 = LinearGroup("", config_.hidden_dim,
                                   config_.expert_hidden_dim, rng);
      ParamGroup fc2 = LinearGroup("", config_.expert_hidden_dim,
                                   config_.hidden_dim, rng);
      ParamGroup expert{ExpertGroupId({l, s}),
                        {std::move(fc1.tensors[0]), std::move(fc1.tensors[1]),
                         std::move(fc2.tensors[0]), std::move(fc2.tensors[1])},
                        true};
      params_.Add(std::move(expert));
    }
  }
  params_.Add(LinearGroup(kHeadGroupId, config_.hidden_dim, config_.output_dim,
                          rng));
}

MoeModel::MoeModel(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.Validate();
  CheckStructure();
}

void MoeModel::CheckStructure() const {
  auto expect = [&](const std::string& id, std::vector<Shape> shapes) {
    if (!params_.Contains(id)) {
      throw ProtocolError("missing parameter group '" + id + "'");
    }
    const auto& g = params_.Get(id);
    if (g.tensors.size() != shapes.size()) {
      throw ProtocolError("group '" + id + "' has wrong tensor count");
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (g.tensors[i].shape() != shapes[i]) {
        throw ProtocolError("group '" + id + "' tensor " + std::to_string(i) +
                            " has shape " + ShapeToString(g.tensors[i].shape()) +
                            ", expected " + ShapeToString(shapes[i]));
      }
    }
  };
  const auto in = static_cast<std::size_t>(config_.input_dim);
  const auto h = static_cast<std::size_t>(config_.hidden_dim);
  const auto eh = static_cast<std::size_t>(config_.expert_hidden_dim);
  const auto s = static_cast<std::size_t>(config_.experts_per_layer);
  const auto out = static_cast<std::size_t>(config_.output_dim);
  expect(kEmbedGroupId, {{in, h}, {h}});
  for (int l = 0; l < config_.num_layers; ++l) {
    expect(GateGroupId(l), {{h, s}, {s}});
    for (int e = 0; e < config_.experts_per_layer; ++e) {
      expect(ExpertGroupId({l, e}), {{h, eh}, {eh}, {eh, h}, {h}});
    }
  }
  expect(kHeadGroupId, {{h, out}, {out}});
  const std::size_t expected_groups =
      2 + static_cast<std::size_t>(config_.num_layers) * (1 + s);
  if (params_.size() != expected_groups) {
    throw ProtocolError("unexpected extra parameter groups");
  }
}

LayerOutput MoeModel::ForwardLayer(Tape& tape, int layer, Var units,
                                   const std::vector<bool>* allowed) const {
  const int s_count = config_.experts_per_layer;
  Var gate_logits = ForwardLinear(tape, units, params_.Get(GateGroupId(layer)));
  Var gates = tape.Softmax(gate_logits);
  Var combine = gates;
  int k = config_.top_k;
  if (allowed) {
    combine = tape.MaskedSoftmax(gate_logits, *allowed);
    const int n_allowed =
        static_cast<int>(std::count(allowed->begin(), allowed->end(), true));
    k = std::min(k, n_allowed);
  }

  const Tensor& cv = tape.value(combine);
  const std::size_t n_units = cv.rows();
  LayerOutput out;
  out.gates = gates;
  out.routed.resize(n_units);
  std::vector<std::vector<std::size_t>> expert_rows(
      static_cast<std::size_t>(s_count));
  std::vector<double> candidate(static_cast<std::size_t>(s_count));
  for (std::size_t u = 0; u < n_units; ++u) {
    auto row = cv.row(u);
    for (int e = 0; e < s_count; ++e) {
      candidate[e] = (allowed && !(*allowed)[e])
                         ? -std::numeric_limits<double>::infinity()
                         : row[e];
    }
    out.routed[u] = TopKRoute(candidate, k);
    for (int e : out.routed[u]) expert_rows[e].push_back(u);
  }

  std::vector<Var> parts;
  std::vector<std::vector<std::size_t>> part_rows;
  for (int e = 0; e < s_count; ++e) {
    if (expert_rows[e].empty()) continue;
    const ParamGroup& g = params_.Get(ExpertGroupId({layer, e}));
    Var xe = tape.GatherRows(units, expert_rows[e]);
    Var h1 = tape.Tanh(
        tape.Linear(xe, tape.Parameter(g, 0), tape.Parameter(g, 1)));
    Var oe = tape.Linear(h1, tape.Parameter(g, 2), tape.Parameter(g, 3));
    Var ge = tape.GatherEntries(combine, expert_rows[e],
                                static_cast<std::size_t>(e));
    parts.push_back(tape.ScaleRows(oe, ge));
    part_rows.push_back(std::move(expert_rows[e]));
  }
  out.output = tape.ScatterSum(std::move(parts), std::move(part_rows), n_units,
                               static_cast<std::size_t>(config_.hidden_dim));
  return out;
}

ForwardOutput MoeModel::Forward(Tape& tape, const Tensor& batch,
                                const ExpertSet* active_override) const {
  const int t_count = config_.units_per_sample();
  const auto in = static_cast<std::size_t>(config_.input_dim);
  std::size_t n_samples = 0;
  if (config_.routing_unit == RoutingUnit::kPerSample) {
    if (batch.rank() != 2 || batch.dim(1) != in) {
      throw DimensionError("batch must be [B x " + std::to_string(in) +
                           "], got " + ShapeToString(batch.shape()));
    }
    n_samples = batch.dim(0);
  } else {
    if (batch.rank() != 3 || batch.dim(1) != static_cast<std::size_t>(t_count) ||
        batch.dim(2) != in) {
      throw DimensionError("batch must be [B x " + std::to_string(t_count) +
                           " x " + std::to_string(in) + "], got " +
                           ShapeToString(batch.shape()));
    }
    n_samples = batch.dim(0);
  }
  const std::size_t n_units = n_samples * static_cast<std::size_t>(t_count);

  std::vector<std::vector<bool>> allowed;
  if (active_override) {
    allowed.assign(static_cast<std::size_t>(config_.num_layers),
                   std::vector<bool>(config_.experts_per_layer, false));
    for (const ExpertKey& e : *active_override) {
      if (e.layer < 0 || e.layer >= config_.num_layers || e.index < 0 ||
          e.index >= config_.experts_per_layer) {
        throw InputError("override expert outside model bounds");
      }
      allowed[e.layer][e.index] = true;
    }
    for (int l = 0; l < config_.num_layers; ++l) {
      if (std::none_of(allowed[l].begin(), allowed[l].end(),
                       [](bool b) { return b; })) {
        throw CoverageError("routing override has no expert in layer " +
                            std::to_string(l));
      }
    }
  }

  ForwardOutput out;
  RoutingRecord& rec = out.record;
  rec.num_layers = config_.num_layers;
  rec.num_units = static_cast<int>(n_units);
  rec.num_experts = config_.experts_per_layer;
  rec.top_k = config_.top_k;
  rec.scores.resize(n_units * static_cast<std::size_t>(config_.num_experts()));
  rec.selected.resize(n_units * static_cast<std::size_t>(config_.num_layers) *
                      static_cast<std::size_t>(config_.top_k));

  Var x = tape.Constant(batch.Reshaped({n_units, in}));
  Var h = tape.Tanh(ForwardLinear(tape, x, params_.Get(kEmbedGroupId)));
  const auto s_count = static_cast<std::size_t>(config_.experts_per_layer);
  for (int l = 0; l < config_.num_layers; ++l) {
    LayerOutput lo = ForwardLayer(tape, l, h,
                                  active_override ? &allowed[l] : nullptr);
    const Tensor& gv = tape.value(lo.gates);
    for (std::size_t u = 0; u < n_units; ++u) {
      auto row = gv.row(u);
      std::copy(row.begin(), row.end(),
                rec.scores.begin() +
                    static_cast<std::ptrdiff_t>((l * n_units + u) * s_count));
      std::vector<int> top = TopKRoute(row, config_.top_k);
      std::copy(top.begin(), top.end(),
                rec.selected.begin() + static_cast<std::ptrdiff_t>(
                                           (l * n_units + u) * config_.top_k));
    }
    out.routed.push_back(std::move(lo.routed));
    h = tape.Add(h, lo.output);
  }
  if (t_count > 1) h = tape.MeanPoolRows(h, static_cast<std::size_t>(t_count));
  out.logits = ForwardLinear(tape, h, params_.Get(kHeadGroupId));
  return out;
}

Tensor MoeModel::Logits(const Tensor& batch) const {
  Tape tape;
  ForwardOutput f = Forward(tape, batch);
  return tape.value(f.logits);
}

MoeForwardResult MoeForward(const Tensor& batch, const MoeModel& model,
                            const ExpertSet* active_override) {
  Tape tape;
  ForwardOutput f = model.Forward(tape, batch, active_override);
  return MoeForwardResult{tape.value(f.logits), std::move(f.record)};
}

}  // namespace hfedmoe
