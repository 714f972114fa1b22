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

// hfedmoe: federated MoE fine-tuning simulator.
//
//   hfedmoe --config cfg.json [--seed N] [--out DIR] [--mode M]
//       Full in-process experiment.
//
// File-exchange mode, one OS process per step:
//   hfedmoe init         --config cfg.json --out global.json
//   hfedmoe client-round --config cfg.json --global global.json
//                        --client C --round R --out pkg_C.json
//   hfedmoe server-round --config cfg.json --global global.json
//                        --round R --packages pkg_0.json ... --out next.json
//
// Exit codes: 0 success, 1 configuration error, 2 runtime/numeric error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfedmoe/errors.h"
#include "hfedmoe/experiment.h"
#include "hfedmoe/federation.h"
#include "hfedmoe/serialization.h"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

hfedmoe::ExperimentConfig LoadConfig(const CommonOptions& o) {
  hfedmoe::ExperimentConfig cfg = hfedmoe::LoadExperimentConfig(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode) cfg.policy.mode = hfedmoe::ParseAggregationMode(*o.mode);
  cfg.Validate();
  return cfg;
}

void AddCommon(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_path, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Override the global seed");
  app->add_option("--mode", o.mode, "Override the aggregation mode")
      ->check(CLI::IsMember({"hfedmoe", "fedavg", "random_drop", "freq_prune"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resource-aware federated fine-tuning of mixture-of-experts models"};
  app.require_subcommand(0, 1);

  CommonOptions run_opts;
  std::string out_dir = "out";
  AddCommon(&app, run_opts);
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();

  CommonOptions init_opts;
  std::string init_out;
  CLI::App* init = app.add_subcommand("init", "Write the initial global model");
  AddCommon(init, init_opts);
  init->add_option("--out", init_out, "Checkpoint path")->required();

  CommonOptions client_opts;
  std::string client_global, client_out;
  int client_id = 0, client_round = 1;
  CLI::App* client =
      app.add_subcommand("client-round", "Train one client and write its package");
  AddCommon(client, client_opts);
  client->add_option("--global", client_global, "Global checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  client->add_option("--client", client_id, "Client index")->required();
  client->add_option("--round", client_round, "Round number (1-based)")->required();
  client->add_option("--out", client_out, "Package path")->required();

  CommonOptions server_opts;
  std::string server_global, server_out;
  int server_round = 1;
  std::vector<std::string> package_paths;
  CLI::App* server =
      app.add_subcommand("server-round", "Aggregate packages into a new global model");
  AddCommon(server, server_opts);
  server->add_option("--global", server_global, "Global checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  server->add_option("--round", server_round, "Round number being closed")
      ->required();
  server->add_option("--packages", package_paths, "Client packages")->required();
  server->add_option("--out", server_out, "Checkpoint path")->required();

  // The top-level --config is only required when no subcommand is given.
  app.get_option("--config")->required(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*init) {
      auto cfg = LoadConfig(init_opts);
      hfedmoe::MoeModel model(
          cfg.model, hfedmoe::DeriveSeed(cfg.seed, hfedmoe::SeedStream::kModelInit));
      hfedmoe::SaveCheckpoint(model, init_out);
    } else if (*client) {
      auto cfg = LoadConfig(client_opts);
      hfedmoe::MoeModel global = hfedmoe::LoadCheckpoint(client_global);
      hfedmoe::UpdatePackage pkg =
          hfedmoe::RunClientRound(cfg, global, client_id, client_round);
      hfedmoe::SavePackage(pkg, client_out);
    } else if (*server) {
      auto cfg = LoadConfig(server_opts);
      hfedmoe::FederationState state;
      state.round = server_round - 1;
      state.global = hfedmoe::LoadCheckpoint(server_global);
      state.budgets = hfedmoe::ResolveBudgets(cfg);
      state.policy = cfg.policy;
      std::vector<hfedmoe::UpdatePackage> packages;
      for (const auto& p : package_paths) packages.push_back(hfedmoe::LoadPackage(p));
      state = hfedmoe::ServerRound(state, packages);
      hfedmoe::SaveCheckpoint(state.global, server_out);
    } else {
      if (run_opts.config_path.empty()) {
        std::cerr << "error: --config is required\n" << app.help();
        return kExitConfig;
      }
      auto cfg = LoadConfig(run_opts);
      hfedmoe::ExperimentResult r = hfedmoe::RunExperiment(cfg, out_dir);
      std::cout << "mode=" << hfedmoe::AggregationModeName(cfg.policy.mode)
                << " rounds=" << cfg.rounds << " final_accuracy="
                << r.final_accuracy << " compute_proxy=" << r.total_compute_proxy
                << " failures=" << r.total_failures << " out=" << out_dir << "\n";
    }
  } catch (const hfedmoe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
