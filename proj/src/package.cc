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

// Update package document, fields in wire order:
//   format, version, client_id, sample_count,
//   usage          [[layer, index, u], ...]      every expert, key order
//   dominant_set   [[layer, index], ...]         key order
//   preference_sum
//   gating         [group, ...]                  gate.0 .. gate.L-1
//   shared         [group, ...]                  embed, head
//   experts        [{layer, index, group}, ...]  key order

#include <utility>

#include "hfedmoe/errors.h"
#include "hfedmoe/federation.h"

namespace hfedmoe {

Json PackageToJson(const UpdatePackage& p) {
  Json j;
  j["format"] = kPackageFormat;
  j["version"] = kPackageVersion;
  j["client_id"] = p.client_id;
  j["sample_count"] = p.sample_count;
  Json usage = Json::array();
  for (const auto& [e, u] : p.usage) usage.push_back(Json::array({e.layer, e.index, u}));
  j["usage"] = std::move(usage);
  Json dominant = Json::array();
  for (const ExpertKey& e : p.dominant_set) {
    dominant.push_back(Json::array({e.layer, e.index}));
  }
  j["dominant_set"] = std::move(dominant);
  j["preference_sum"] = p.preference_sum;
  Json gating = Json::array();
  for (const auto& g : p.gating) gating.push_back(ParamGroupToJson(g));
  j["gating"] = std::move(gating);
  Json shared = Json::array();
  for (const auto& g : p.shared) shared.push_back(ParamGroupToJson(g));
  j["shared"] = std::move(shared);
  Json experts = Json::array();
  for (const auto& [e, g] : p.experts) {
    Json entry;
    entry["layer"] = e.layer;
    entry["index"] = e.index;
    entry["group"] = ParamGroupToJson(g);
    experts.push_back(std::move(entry));
  }
  j["experts"] = std::move(experts);
  return j;
}

UpdatePackage PackageFromJson(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kPackageFormat) {
      throw ProtocolError("not an update package document");
    }
    if (j.at("version").get<int>() != kPackageVersion) {
      throw ProtocolError("unsupported package version");
    }
    UpdatePackage p;
    p.client_id = j.at("client_id").get<int>();
    p.sample_count = j.at("sample_count").get<std::int64_t>();
    if (p.sample_count <= 0) throw ProtocolError("sample_count must be positive");
    for (const auto& row : j.at("usage")) {
      p.usage.emplace(ExpertKey{row.at(0).get<int>(), row.at(1).get<int>()},
                      row.at(2).get<double>());
    }
    for (const auto& row : j.at("dominant_set")) {
      p.dominant_set.insert({row.at(0).get<int>(), row.at(1).get<int>()});
    }
    p.preference_sum = j.at("preference_sum").get<double>();
    if (p.preference_sum < 0.0) throw ProtocolError("negative preference_sum");
    for (const auto& g : j.at("gating")) p.gating.push_back(ParamGroupFromJson(g));
    for (const auto& g : j.at("shared")) p.shared.push_back(ParamGroupFromJson(g));
    for (const auto& entry : j.at("experts")) {
      ExpertKey e{entry.at("layer").get<int>(), entry.at("index").get<int>()};
      p.experts.emplace(e, ParamGroupFromJson(entry.at("group")));
    }
    for (const auto& [e, g] : p.experts) {
      if (!p.dominant_set.count(e)) {
        throw ProtocolError("uploaded expert outside the dominant set");
      }
    }
    if (p.experts.size() != p.dominant_set.size()) {
      throw ProtocolError("dominant expert missing from upload");
    }
    return p;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed update package: ") + e.what());
  }
}

void SavePackage(const UpdatePackage& p, const std::string& path) {
  WriteTextFile(path, PackageToJson(p).dump() + "\n");
}

UpdatePackage LoadPackage(const std::string& path) {
  Json j;
  try {
    j = Json::parse(ReadTextFile(path));
  } catch (const Json::parse_error& e) {
    throw ProtocolError("package '" + path + "' is not JSON: " + e.what());
  }
  return PackageFromJson(j);
}

}  // namespace hfedmoe
