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

#ifndef HFEDMOE_EXPERIMENT_H_
#define HFEDMOE_EXPERIMENT_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hfedmoe/federation.h"
#include "hfedmoe/importance.h"
#include "hfedmoe/moe.h"
#include "hfedmoe/selection.h"
#include "hfedmoe/serialization.h"

namespace hfedmoe {

// Stream tags for DeriveSeed.
enum class SeedStream : std::uint64_t {
  kModelInit = 1,
  kCenters = 2,
  kClientTrain = 3,
  kClientTest = 4,
  kGlobalTest = 5,
  kLocalTraining = 6,
  kBudgets = 7,
};

// Sub-seed for (stream, a, b) from the global seed via chained splitmix64.
// A stream's seeds depend only on its own coordinates, so adding clients or
// rounds never perturbs existing ones.
std::uint64_t DeriveSeed(std::uint64_t seed, SeedStream stream, std::uint64_t a = 0,
                         std::uint64_t b = 0);

struct SyntheticTaskSpec {
  int num_classes = 4;
  int input_dim = 16;
  // Gaussian modes per class.
  int clusters_per_class = 2;
  // Fraction of a client's samples drawn from its preferred classes.
  double skew = 0.8;
  int samples_per_client = 2000;
  int test_samples_per_client = 200;
  int global_test_samples = 1000;
  double center_scale = 1.5;  // stddev of mode centers
  double noise = 1.0;         // stddev around a mode
  // Tokens per sample (per-token routing); 1 for pooled samples.
  int tokens_per_sample = 1;

  void Validate(int num_clients) const;
};

struct ClientData {
  Dataset train;
  Dataset test;
  std::vector<int> preferred_classes;
};

// Classes k with k % C == c are client c's preferred set (c % K when C > K).
std::vector<int> PreferredClasses(const SyntheticTaskSpec& spec, int num_clients,
                                  int client);

// Throws ConfigError when skew == 1 and C > num_classes.
std::vector<ClientData> GenerateClients(const SyntheticTaskSpec& spec,
                                        int num_clients, std::uint64_t seed);
// IID held-out set (skew ignored).
Dataset GenerateGlobalTestSet(const SyntheticTaskSpec& spec, std::uint64_t seed);

// Fraction of argmax predictions equal to the label. Throws InputError on an
// empty test set.
double Evaluate(const MoeModel& model, const Dataset& test);
double EvaluateLoss(const MoeModel& model, const Dataset& test);

struct BudgetSpec {
  std::optional<int> max_active_experts;
  std::optional<double> memory_gb;
};

struct ExperimentConfig {
  ModelConfig model;
  int clients = 4;
  int rounds = 30;
  int epochs = 1;
  int batch_size = 8;
  double lr = 1e-4;
  ImportanceConfig importance;
  AggregationPolicy policy;
  SortKey sort_key = SortKey::kIbScore;
  // Applied to clients without an entry in per_client_budgets; unset means
  // unconstrained (L*S).
  BudgetSpec default_budget;
  std::vector<BudgetSpec> per_client_budgets;
  // If set, each client's memory is drawn uniformly from [lo, hi] GB.
  std::optional<std::pair<double, double>> memory_gb_range;
  CostModel cost_model;
  SyntheticTaskSpec data;
  std::uint64_t seed = 42;
  bool write_importance = false;
  bool record_wall_time = false;

  // Throws ConfigError.
  void Validate() const;
};

Json ExperimentConfigToJson(const ExperimentConfig& cfg);
ExperimentConfig ExperimentConfigFromJson(const Json& j);
ExperimentConfig LoadExperimentConfig(const std::string& path);

// Budgets per client. Throws InfeasibleClientError naming the first client
// whose budget cannot cover every layer.
std::vector<ClientBudget> ResolveBudgets(const ExperimentConfig& cfg);

struct MetricsRow {
  int round = 0;
  std::string client;  // client id or "global"
  double loss = 0.0;
  double accuracy = 0.0;
  double experts_activated_fraction = 0.0;
  int failure_events = 0;
  double wall_time_ms = 0.0;
  std::int64_t compute_proxy = 0;
};

void WriteMetricsCsvHeader(std::ostream& os);
void WriteMetricsCsvRow(std::ostream& os, const MetricsRow& row);

struct SelectionLogRow {
  int round = 0;
  int client = 0;
  BatchLog batch;
};

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  std::vector<SelectionLogRow> selection_log;
  std::vector<ClientBudget> budgets;
  MoeModel final_model;
  double final_accuracy = 0.0;
  std::int64_t total_compute_proxy = 0;
  int total_failures = 0;
};

// Runs `cfg.rounds` synchronous rounds. When `out_dir` is non-empty writes
//   metrics.csv, selection.csv, aggregation.csv, final_model.json
//   (and importance.csv if enabled) into it.
ExperimentResult RunExperiment(const ExperimentConfig& cfg,
                               const std::string& out_dir = "");

// Client-side half of a round for file-exchange mode: regenerates the
// client's data from the config and trains from `global`.
UpdatePackage RunClientRound(const ExperimentConfig& cfg, const MoeModel& global,
                             int client, int round);

}  // namespace hfedmoe

#endif  // HFEDMOE_EXPERIMENT_H_
