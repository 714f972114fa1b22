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
#include <numeric>
#include <random>
#include <utility>

#include "hfedmoe/errors.h"
#include "hfedmoe/federation.h"

namespace hfedmoe {

std::string AggregationModeName(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::kHFedMoE:
      return "hfedmoe";
    case AggregationMode::kFedAvg:
      return "fedavg";
    case AggregationMode::kRandomDrop:
      return "random_drop";
    case AggregationMode::kFreqPrune:
      return "freq_prune";
  }
  return "hfedmoe";
}

AggregationMode ParseAggregationMode(const std::string& name) {
  if (name == "hfedmoe") return AggregationMode::kHFedMoE;
  if (name == "fedavg") return AggregationMode::kFedAvg;
  if (name == "random_drop") return AggregationMode::kRandomDrop;
  if (name == "freq_prune") return AggregationMode::kFreqPrune;
  throw ConfigError("unknown mode '" + name + "'");
}

void AggregationPolicy::Validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0, 1)");
}

Tensor Dataset::Batch(std::span<const std::size_t> idx) const {
  Shape shape = features.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  const std::size_t width = features.cols();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = features.row(idx[r]);
    std::copy(src.begin(), src.end(), out.data().begin() +
                                          static_cast<std::ptrdiff_t>(r * width));
  }
  return out;
}

std::vector<int> Dataset::BatchLabels(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

double ComputeUsage(std::span<const RoutingRecord> records, const ExpertKey& e) {
  double sum = 0.0;
  std::int64_t units = 0;
  for (const RoutingRecord& r : records) {
    for (int u = 0; u < r.num_units; ++u) sum += r.score(e, u);
    units += r.num_units;
  }
  if (units == 0) throw InputError("usage over an empty dataset");
  return sum / static_cast<double>(units);
}

namespace {

struct UsageAccumulator {
  std::vector<double> sums;
  std::int64_t units = 0;

  void Add(const RoutingRecord& r) {
    if (sums.empty()) {
      sums.assign(static_cast<std::size_t>(r.num_layers * r.num_experts), 0.0);
    }
    for (int l = 0; l < r.num_layers; ++l) {
      for (int s = 0; s < r.num_experts; ++s) {
        double& acc = sums[static_cast<std::size_t>(l * r.num_experts + s)];
        for (int u = 0; u < r.num_units; ++u) acc += r.score(l, u, s);
      }
    }
    units += r.num_units;
  }
};

}  // namespace

ClientRoundResult ClientRound(const ClientState& client, const MoeModel& global,
                              const TrainingConfig& cfg, std::uint64_t seed) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (client.data.size() == 0) {
    throw InputError("client " + std::to_string(client.client_id) +
                     " has no samples");
  }
  const ModelConfig& mc = global.config();
  const AggregationMode mode = cfg.policy.mode;

  ClientRoundResult res;
  res.local_model = global;
  MoeModel& local = res.local_model;
  std::mt19937_64 rng(seed);

  const std::size_t n = client.data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  UsageAccumulator usage;
  std::vector<double> importance_sum(static_cast<std::size_t>(mc.num_experts()),
                                     0.0);
  int final_batches = 0;
  double loss_sum = 0.0;
  double active_fraction_sum = 0.0;
  int trained_batches = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool final_epoch = epoch == cfg.epochs - 1;
    for (std::size_t i = n; i-- > 1;) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
    int batch_index = 0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t stop =
          std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tensor x = client.data.Batch(idx);
      std::vector<int> y = client.data.BatchLabels(idx);

      Tape tape;
      ForwardOutput fwd = local.Forward(tape, x);
      LossValue loss = tape.CrossEntropy(fwd.logits, y);
      ImportanceReport report = BuildReport(fwd.record, cfg.importance);
      ExpertSet union_set = RouteUnion(fwd.record);

      BatchLog log;
      log.epoch = epoch;
      log.batch = batch_index;
      log.union_size = static_cast<int>(union_set.size());
      log.budget = client.budget.max_active_experts;

      SelectionResult sel;
      bool failed = false;
      try {
        switch (mode) {
          case AggregationMode::kHFedMoE:
            sel = SelectActive(union_set, report, client.budget, cfg.sort_key);
            break;
          case AggregationMode::kFreqPrune:
            sel = SelectActive(union_set, report, client.budget,
                               SortKey::kCumulative);
            break;
          case AggregationMode::kRandomDrop:
            sel = SelectRandom(union_set, report, client.budget, rng);
            break;
          case AggregationMode::kFedAvg:
            // No re-scheduling: the whole routed union must fit the budget.
            if (static_cast<int>(union_set.size()) >
                client.budget.max_active_experts) {
              throw CoverageError("routed union exceeds budget");
            }
            sel.union_set = union_set;
            sel.active = union_set;
            sel.objective_value = SelectionObjective(sel.active, report);
            break;
        }
      } catch (const CoverageError&) {
        failed = true;
      }

      if (failed) {
        log.failed = true;
        ++res.failure_events;
      } else {
        log.active_size = static_cast<int>(sel.active.size());
        log.objective = sel.objective_value;
        GradientMask mask = GradientMaskFor(sel.active, mc);
        GradientSet grads = tape.Backward(loss, local.params(), mask);
        SgdStep(local.params(), grads, cfg.lr, mask);
        res.compute_proxy += log.active_size;
        active_fraction_sum +=
            static_cast<double>(log.active_size) / mc.num_experts();
        ++trained_batches;
      }
      res.batch_logs.push_back(log);

      if (final_epoch) {
        usage.Add(fwd.record);
        for (std::size_t e = 0; e < importance_sum.size(); ++e) {
          importance_sum[e] += report.experts[e].s_combined;
        }
        loss_sum += loss.scalar;
        ++final_batches;
        res.last_report = std::move(report);
        if (cfg.keep_records) res.final_epoch_records.push_back(fwd.record);
      }
    }
  }
  res.batches = static_cast<int>(res.batch_logs.size());
  res.mean_loss = loss_sum / final_batches;
  res.experts_activated_fraction =
      trained_batches ? active_fraction_sum / trained_batches : 0.0;

  UpdatePackage& pkg = res.package;
  pkg.client_id = client.client_id;
  pkg.sample_count = static_cast<std::int64_t>(n);
  const double tau = cfg.policy.effective_tau();
  double preference = 0.0;
  for (const ExpertKey& e : AllExperts(mc)) {
    const auto flat = static_cast<std::size_t>(e.layer * mc.experts_per_layer +
                                               e.index);
    const double u = usage.sums[flat] / static_cast<double>(usage.units);
    const double s = importance_sum[flat] / final_batches;
    pkg.usage.emplace(e, u);
    res.mean_importance.emplace(e, s);
    if (u >= tau) {
      pkg.dominant_set.insert(e);
      preference += ExpertPreference(u, s);
      pkg.experts.emplace(e, local.params().Get(ExpertGroupId(e)));
    }
  }
  pkg.preference_sum = preference;
  for (int l = 0; l < mc.num_layers; ++l) {
    pkg.gating.push_back(local.params().Get(GateGroupId(l)));
  }
  pkg.shared.push_back(local.params().Get(kEmbedGroupId));
  pkg.shared.push_back(local.params().Get(kHeadGroupId));
  return res;
}

}  // namespace hfedmoe
