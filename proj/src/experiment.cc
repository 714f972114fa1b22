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

#include "hfedmoe/experiment.h"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "hfedmoe/csv.h"
#include "hfedmoe/errors.h"

namespace hfedmoe {

void WriteMetricsCsvHeader(std::ostream& os) {
  os << "round,client,loss,accuracy,experts_activated_fraction,failure_events,"
        "wall_time_ms,compute_proxy\n";
}

void WriteMetricsCsvRow(std::ostream& os, const MetricsRow& r) {
  os << r.round << ',' << r.client << ',' << FormatDouble(r.loss) << ','
     << FormatDouble(r.accuracy) << ','
     << FormatDouble(r.experts_activated_fraction) << ',' << r.failure_events
     << ',' << FormatDouble(r.wall_time_ms) << ',' << r.compute_proxy << '\n';
}

namespace {

TrainingConfig MakeTrainingConfig(const ExperimentConfig& cfg) {
  TrainingConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.importance = cfg.importance;
  t.policy = cfg.policy;
  t.sort_key = cfg.sort_key;
  return t;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ElapsedMs() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

UpdatePackage RunClientRound(const ExperimentConfig& cfg, const MoeModel& global,
                             int client, int round) {
  cfg.Validate();
  if (client < 0 || client >= cfg.clients) {
    throw ConfigError("client index " + std::to_string(client) + " out of range");
  }
  const auto budgets = ResolveBudgets(cfg);
  auto data = GenerateClients(cfg.data, cfg.clients, cfg.seed);
  ClientState state{client, std::move(data[static_cast<std::size_t>(client)].train),
                    budgets[static_cast<std::size_t>(client)]};
  return ClientRound(state, global, MakeTrainingConfig(cfg),
                     DeriveSeed(cfg.seed, SeedStream::kLocalTraining,
                                static_cast<std::uint64_t>(client),
                                static_cast<std::uint64_t>(round)))
      .package;
}

ExperimentResult RunExperiment(const ExperimentConfig& cfg,
                               const std::string& out_dir) {
  cfg.Validate();
  ExperimentResult result;
  result.budgets = ResolveBudgets(cfg);
  std::vector<ClientData> data = GenerateClients(cfg.data, cfg.clients, cfg.seed);
  const Dataset global_test = GenerateGlobalTestSet(cfg.data, cfg.seed);
  const TrainingConfig tcfg = MakeTrainingConfig(cfg);

  std::vector<ClientState> clients;
  for (int c = 0; c < cfg.clients; ++c) {
    clients.push_back(ClientState{c, data[static_cast<std::size_t>(c)].train,
                                  result.budgets[static_cast<std::size_t>(c)]});
  }

  FederationState state;
  state.global = MoeModel(cfg.model, DeriveSeed(cfg.seed, SeedStream::kModelInit));
  state.budgets = result.budgets;
  state.policy = cfg.policy;

  std::ostringstream metrics_csv, selection_csv, aggregation_csv, importance_csv;
  WriteMetricsCsvHeader(metrics_csv);
  WriteSelectionCsvHeader(selection_csv);
  aggregation_csv << "round,client,routing_consistency,gating_weight,"
                     "preference_sum,dominant_size,gating_fallback\n";
  if (cfg.write_importance) WriteImportanceCsvHeader(importance_csv);

  for (int round = 1; round <= cfg.rounds; ++round) {
    Stopwatch round_clock;
    std::vector<UpdatePackage> packages;
    MetricsRow global_row;
    global_row.round = round;
    global_row.client = "global";
    double fraction_sum = 0.0;
    for (const ClientState& client : clients) {
      Stopwatch client_clock;
      ClientRoundResult r = ClientRound(
          client, state.global, tcfg,
          DeriveSeed(cfg.seed, SeedStream::kLocalTraining,
                     static_cast<std::uint64_t>(client.client_id),
                     static_cast<std::uint64_t>(round)));
      MetricsRow row;
      row.round = round;
      row.client = std::to_string(client.client_id);
      row.loss = r.mean_loss;
      row.accuracy = Evaluate(
          r.local_model, data[static_cast<std::size_t>(client.client_id)].test);
      row.experts_activated_fraction = r.experts_activated_fraction;
      row.failure_events = r.failure_events;
      row.compute_proxy = r.compute_proxy;
      row.wall_time_ms = cfg.record_wall_time ? client_clock.ElapsedMs() : 0.0;
      WriteMetricsCsvRow(metrics_csv, row);
      result.metrics.push_back(row);

      for (const BatchLog& b : r.batch_logs) {
        result.selection_log.push_back({round, client.client_id, b});
        selection_csv << round << ',' << client.client_id << ',' << b.batch
                      << ',' << b.union_size << ',' << b.active_size << ','
                      << b.budget << ',' << FormatDouble(b.objective) << '\n';
      }
      if (cfg.write_importance) {
        WriteImportanceCsvRows(importance_csv, round,
                               std::to_string(client.client_id), r.last_report);
      }
      fraction_sum += r.experts_activated_fraction;
      global_row.failure_events += r.failure_events;
      global_row.compute_proxy += r.compute_proxy;
      packages.push_back(std::move(r.package));
    }

    ServerDiagnostics diag;
    state = ServerRound(state, packages, &diag);
    for (std::size_t i = 0; i < packages.size(); ++i) {
      aggregation_csv << round << ',' << packages[i].client_id << ','
                      << FormatDouble(diag.routing_consistency[i]) << ','
                      << FormatDouble(diag.gating.normalized[i]) << ','
                      << FormatDouble(packages[i].preference_sum) << ','
                      << packages[i].dominant_set.size() << ','
                      << (diag.gating.fallback ? 1 : 0) << '\n';
    }

    global_row.loss = EvaluateLoss(state.global, global_test);
    global_row.accuracy = Evaluate(state.global, global_test);
    global_row.experts_activated_fraction = fraction_sum / cfg.clients;
    global_row.wall_time_ms = cfg.record_wall_time ? round_clock.ElapsedMs() : 0.0;
    WriteMetricsCsvRow(metrics_csv, global_row);
    result.metrics.push_back(global_row);
    result.total_compute_proxy += global_row.compute_proxy;
    result.total_failures += global_row.failure_events;
  }

  result.final_accuracy = Evaluate(state.global, global_test);
  result.final_model = state.global;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    WriteTextFile((dir / "metrics.csv").string(), metrics_csv.str());
    WriteTextFile((dir / "selection.csv").string(), selection_csv.str());
    WriteTextFile((dir / "aggregation.csv").string(), aggregation_csv.str());
    if (cfg.write_importance) {
      WriteTextFile((dir / "importance.csv").string(), importance_csv.str());
    }
    SaveCheckpoint(result.final_model, (dir / "final_model.json").string());
  }
  return result;
}

}  // namespace hfedmoe
