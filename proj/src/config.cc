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

#include <random>
#include <utility>

#include "hfedmoe/errors.h"
#include "hfedmoe/experiment.h"

namespace hfedmoe {

void ExperimentConfig::Validate() const {
  model.Validate();
  if (clients < 1) throw ConfigError("clients must be positive");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  importance.Validate();
  policy.Validate();
  data.Validate(clients);
  if (data.input_dim != model.input_dim) {
    throw ConfigError("data.input_dim must equal model.input_dim");
  }
  if (data.num_classes != model.output_dim) {
    throw ConfigError("data.num_classes must equal model.output_dim");
  }
  if (data.tokens_per_sample != model.units_per_sample()) {
    throw ConfigError(
        "data.tokens_per_sample must match the model's routing units per sample");
  }
  if (static_cast<int>(per_client_budgets.size()) > clients) {
    throw ConfigError("more per-client budgets than clients");
  }
  if (memory_gb_range &&
      !(memory_gb_range->first > 0.0 &&
        memory_gb_range->first <= memory_gb_range->second)) {
    throw ConfigError("memory_gb_range must be [lo, hi] with 0 < lo <= hi");
  }
}

namespace {

Json BudgetToJson(const BudgetSpec& b) {
  Json j = Json::object();
  if (b.max_active_experts) j["max_active_experts"] = *b.max_active_experts;
  if (b.memory_gb) j["memory_gb"] = *b.memory_gb;
  return j;
}

BudgetSpec BudgetFromJson(const Json& j) {
  BudgetSpec b;
  if (j.contains("max_active_experts")) {
    b.max_active_experts = j.at("max_active_experts").get<int>();
  }
  if (j.contains("memory_gb")) b.memory_gb = j.at("memory_gb").get<double>();
  if (b.max_active_experts && b.memory_gb) {
    throw ConfigError("a budget sets either max_active_experts or memory_gb");
  }
  return b;
}

}  // namespace

Json ExperimentConfigToJson(const ExperimentConfig& cfg) {
  Json j;
  j["model"] = ModelConfigToJson(cfg.model);
  j["clients"] = cfg.clients;
  j["rounds"] = cfg.rounds;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["importance"] = {{"lambda", cfg.importance.lambda},
                     {"beta", cfg.importance.beta},
                     {"epsilon", cfg.importance.epsilon}};
  j["policy"] = {{"tau", cfg.policy.tau},
                 {"mode", AggregationModeName(cfg.policy.mode)},
                 {"sort_key", SortKeyName(cfg.sort_key)}};
  Json budgets;
  budgets["default"] = BudgetToJson(cfg.default_budget);
  Json per_client = Json::array();
  for (const auto& b : cfg.per_client_budgets) per_client.push_back(BudgetToJson(b));
  budgets["per_client"] = std::move(per_client);
  if (cfg.memory_gb_range) {
    budgets["memory_gb_range"] = {cfg.memory_gb_range->first,
                                  cfg.memory_gb_range->second};
  }
  budgets["cost_model"] = {{"base_gb", cfg.cost_model.base_gb},
                           {"per_expert_gb", cfg.cost_model.per_expert_gb}};
  j["budgets"] = std::move(budgets);
  const SyntheticTaskSpec& d = cfg.data;
  j["data"] = {{"num_classes", d.num_classes},
               {"input_dim", d.input_dim},
               {"clusters_per_class", d.clusters_per_class},
               {"skew", d.skew},
               {"samples_per_client", d.samples_per_client},
               {"test_samples_per_client", d.test_samples_per_client},
               {"global_test_samples", d.global_test_samples},
               {"center_scale", d.center_scale},
               {"noise", d.noise},
               {"tokens_per_sample", d.tokens_per_sample}};
  j["seed"] = cfg.seed;
  j["write_importance"] = cfg.write_importance;
  j["record_wall_time"] = cfg.record_wall_time;
  return j;
}

ExperimentConfig ExperimentConfigFromJson(const Json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("model")) cfg.model = ModelConfigFromJson(j.at("model"));
    cfg.clients = j.value("clients", cfg.clients);
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    if (j.contains("importance")) {
      const Json& im = j.at("importance");
      cfg.importance.lambda = im.value("lambda", cfg.importance.lambda);
      cfg.importance.beta = im.value("beta", cfg.importance.beta);
      cfg.importance.epsilon = im.value("epsilon", cfg.importance.epsilon);
    }
    if (j.contains("policy")) {
      const Json& p = j.at("policy");
      cfg.policy.tau = p.value("tau", cfg.policy.tau);
      cfg.policy.mode = ParseAggregationMode(
          p.value("mode", AggregationModeName(cfg.policy.mode)));
      cfg.sort_key = ParseSortKey(p.value("sort_key", SortKeyName(cfg.sort_key)));
    }
    if (j.contains("budgets")) {
      const Json& b = j.at("budgets");
      if (b.contains("default")) cfg.default_budget = BudgetFromJson(b.at("default"));
      if (b.contains("per_client")) {
        for (const auto& e : b.at("per_client")) {
          cfg.per_client_budgets.push_back(BudgetFromJson(e));
        }
      }
      if (b.contains("memory_gb_range")) {
        const Json& r = b.at("memory_gb_range");
        cfg.memory_gb_range = std::make_pair(r.at(0).get<double>(),
                                             r.at(1).get<double>());
      }
      if (b.contains("cost_model")) {
        const Json& c = b.at("cost_model");
        cfg.cost_model.base_gb = c.value("base_gb", cfg.cost_model.base_gb);
        cfg.cost_model.per_expert_gb =
            c.value("per_expert_gb", cfg.cost_model.per_expert_gb);
      }
    }
    if (j.contains("data")) {
      const Json& d = j.at("data");
      SyntheticTaskSpec& s = cfg.data;
      s.num_classes = d.value("num_classes", cfg.model.output_dim);
      s.input_dim = d.value("input_dim", cfg.model.input_dim);
      s.clusters_per_class = d.value("clusters_per_class", s.clusters_per_class);
      s.skew = d.value("skew", s.skew);
      s.samples_per_client = d.value("samples_per_client", s.samples_per_client);
      s.test_samples_per_client =
          d.value("test_samples_per_client", s.test_samples_per_client);
      s.global_test_samples = d.value("global_test_samples", s.global_test_samples);
      s.center_scale = d.value("center_scale", s.center_scale);
      s.noise = d.value("noise", s.noise);
      s.tokens_per_sample =
          d.value("tokens_per_sample", cfg.model.units_per_sample());
    } else {
      cfg.data.num_classes = cfg.model.output_dim;
      cfg.data.input_dim = cfg.model.input_dim;
      cfg.data.tokens_per_sample = cfg.model.units_per_sample();
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.write_importance = j.value("write_importance", cfg.write_importance);
    cfg.record_wall_time = j.value("record_wall_time", cfg.record_wall_time);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::string text;
  try {
    text = ReadTextFile(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  try {
    return ExperimentConfigFromJson(Json::parse(text));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not JSON: " + e.what());
  }
}

std::vector<ClientBudget> ResolveBudgets(const ExperimentConfig& cfg) {
  const ModelConfig& mc = cfg.model;
  std::vector<ClientBudget> out;
  std::mt19937_64 rng(DeriveSeed(cfg.seed, SeedStream::kBudgets));
  for (int c = 0; c < cfg.clients; ++c) {
    BudgetSpec spec = cfg.default_budget;
    if (c < static_cast<int>(cfg.per_client_budgets.size())) {
      spec = cfg.per_client_budgets[static_cast<std::size_t>(c)];
    } else if (cfg.memory_gb_range) {
      std::uniform_real_distribution<double> mem(cfg.memory_gb_range->first,
                                                 cfg.memory_gb_range->second);
      spec = BudgetSpec{std::nullopt, mem(rng)};
    }
    ClientBudget b;
    try {
      if (spec.memory_gb) {
        b.memory_gb = spec.memory_gb;
        b.max_active_experts = MemoryToBudget(*spec.memory_gb, cfg.cost_model, mc);
      } else {
        b.max_active_experts = spec.max_active_experts.value_or(mc.num_experts());
      }
    } catch (const InfeasibleClientError& e) {
      throw InfeasibleClientError("client " + std::to_string(c) + ": " + e.what());
    }
    if (b.max_active_experts < mc.num_layers) {
      throw InfeasibleClientError(
          "client " + std::to_string(c) + ": budget of " +
          std::to_string(b.max_active_experts) + " experts cannot cover " +
          std::to_string(mc.num_layers) + " layers");
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace hfedmoe
