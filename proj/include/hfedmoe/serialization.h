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

// JSON documents for model checkpoints. Keys are emitted in a fixed order
// and doubles with shortest round-trip precision, so identical contents give
// identical bytes and a load/save cycle is lossless.

#ifndef HFEDMOE_SERIALIZATION_H_
#define HFEDMOE_SERIALIZATION_H_

#include <string>

#include "json.hpp"
#include "hfedmoe/moe.h"
#include "hfedmoe/params.h"
#include "hfedmoe/tensor.h"

namespace hfedmoe {

using Json = nlohmann::ordered_json;

inline constexpr char kCheckpointFormat[] = "hfedmoe.checkpoint";
inline constexpr int kCheckpointVersion = 1;

Json TensorToJson(const Tensor& t);
Tensor TensorFromJson(const Json& j);

Json ParamGroupToJson(const ParamGroup& g);
ParamGroup ParamGroupFromJson(const Json& j);

Json ModelConfigToJson(const ModelConfig& c);
// Missing keys keep their defaults; throws ConfigError on bad values.
ModelConfig ModelConfigFromJson(const Json& j);

Json ModelToJson(const MoeModel& model);
// Throws ProtocolError on a malformed or version-mismatched document.
MoeModel ModelFromJson(const Json& j);

void SaveCheckpoint(const MoeModel& model, const std::string& path);
MoeModel LoadCheckpoint(const std::string& path);

// File helpers shared by checkpoint and package exchange.
void WriteTextFile(const std::string& path, const std::string& contents);
std::string ReadTextFile(const std::string& path);

}  // namespace hfedmoe

#endif  // HFEDMOE_SERIALIZATION_H_
