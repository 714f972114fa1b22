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

#include "hfedmoe/serialization.h"

#include <fstream>
#include <sstream>
#include <utility>

#include "hfedmoe/errors.h"

namespace hfedmoe {

Json TensorToJson(const Tensor& t) {
  Json j;
  j["shape"] = t.shape();
  j["data"] = t.values();
  return j;
}

Tensor TensorFromJson(const Json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(),
                  j.at("data").get<std::vector<double>>());
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed tensor: ") + e.what());
  } catch (const DimensionError& e) {
    throw ProtocolError(std::string("malformed tensor: ") + e.what());
  }
}

Json ParamGroupToJson(const ParamGroup& g) {
  Json j;
  j["id"] = g.id;
  j["trainable"] = g.trainable;
  Json tensors = Json::array();
  for (const auto& t : g.tensors) tensors.push_back(TensorToJson(t));
  j["tensors"] = std::move(tensors);
  return j;
}

ParamGroup ParamGroupFromJson(const Json& j) {
  try {
    ParamGroup g;
    g.id = j.at("id").get<std::string>();
    g.trainable = j.value("trainable", true);
    for (const auto& t : j.at("tensors")) g.tensors.push_back(TensorFromJson(t));
    return g;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed parameter group: ") + e.what());
  }
}

Json ModelConfigToJson(const ModelConfig& c) {
  Json j;
  j["num_layers"] = c.num_layers;
  j["experts_per_layer"] = c.experts_per_layer;
  j["top_k"] = c.top_k;
  j["input_dim"] = c.input_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["expert_hidden_dim"] = c.expert_hidden_dim;
  j["output_dim"] = c.output_dim;
  j["routing_unit"] = RoutingUnitName(c.routing_unit);
  j["tokens_per_sample"] = c.tokens_per_sample;
  return j;
}

ModelConfig ModelConfigFromJson(const Json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.experts_per_layer = j.value("experts_per_layer", c.experts_per_layer);
    c.top_k = j.value("top_k", c.top_k);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.expert_hidden_dim = j.value("expert_hidden_dim", c.hidden_dim);
    c.output_dim = j.value("output_dim", c.output_dim);
    c.routing_unit = ParseRoutingUnit(
        j.value("routing_unit", RoutingUnitName(c.routing_unit)));
    c.tokens_per_sample = j.value("tokens_per_sample", c.tokens_per_sample);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.Validate();
  return c;
}

Json ModelToJson(const MoeModel& model) {
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = ModelConfigToJson(model.config());
  Json groups = Json::array();
  for (const auto& g : model.params().groups()) {
    groups.push_back(ParamGroupToJson(g));
  }
  j["groups"] = std::move(groups);
  return j;
}

MoeModel ModelFromJson(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw ProtocolError("not a checkpoint document");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ProtocolError("unsupported checkpoint version " +
                          std::to_string(j.at("version").get<int>()));
    }
    ModelConfig config;
    try {
      config = ModelConfigFromJson(j.at("config"));
    } catch (const ConfigError& e) {
      throw ProtocolError(std::string("checkpoint config: ") + e.what());
    }
    ParamStore params;
    for (const auto& g : j.at("groups")) params.Add(ParamGroupFromJson(g));
    return MoeModel(std::move(config), std::move(params));
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw ProtocolError(std::string("malformed checkpoint: ") + e.what());
  }
}

void WriteTextFile(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << contents;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void SaveCheckpoint(const MoeModel& model, const std::string& path) {
  WriteTextFile(path, ModelToJson(model).dump() + "\n");
}

MoeModel LoadCheckpoint(const std::string& path) {
  Json j;
  try {
    j = Json::parse(ReadTextFile(path));
  } catch (const Json::parse_error& e) {
    throw ProtocolError("checkpoint '" + path + "' is not JSON: " + e.what());
  }
  return ModelFromJson(j);
}

}  // namespace hfedmoe
