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

// Synthetic non-IID classification task: each class is a mixture of
// Gaussian modes shared by all clients; clients differ in how often they
// draw from their preferred classes.

#include <algorithm>
#include <numeric>
#include <random>

#include "hfedmoe/errors.h"
#include "hfedmoe/experiment.h"

namespace hfedmoe {

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t DeriveSeed(std::uint64_t seed, SeedStream stream, std::uint64_t a,
                         std::uint64_t b) {
  std::uint64_t h = SplitMix64(seed);
  h = SplitMix64(h ^ static_cast<std::uint64_t>(stream));
  h = SplitMix64(h ^ a);
  return SplitMix64(h ^ b);
}

void SyntheticTaskSpec::Validate(int num_clients) const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (clusters_per_class < 1) throw ConfigError("clusters_per_class must be >= 1");
  if (!(skew >= 0.0 && skew <= 1.0)) throw ConfigError("skew must lie in [0, 1]");
  if (samples_per_client < 1) throw ConfigError("samples_per_client must be >= 1");
  if (test_samples_per_client < 1 || global_test_samples < 1) {
    throw ConfigError("test set sizes must be positive");
  }
  if (tokens_per_sample < 1) throw ConfigError("tokens_per_sample must be >= 1");
  if (!(noise >= 0.0) || !(center_scale > 0.0)) {
    throw ConfigError("noise must be >= 0 and center_scale > 0");
  }
  if (skew == 1.0 && num_clients > num_classes) {
    throw ConfigError("skew=1 needs at least as many classes as clients (" +
                      std::to_string(num_clients) + " clients, " +
                      std::to_string(num_classes) + " classes)");
  }
}

std::vector<int> PreferredClasses(const SyntheticTaskSpec& spec, int num_clients,
                                  int client) {
  std::vector<int> out;
  if (num_clients <= spec.num_classes) {
    for (int k = 0; k < spec.num_classes; ++k) {
      if (k % num_clients == client) out.push_back(k);
    }
  } else {
    out.push_back(client % spec.num_classes);
  }
  return out;
}

namespace {

// centers[k * M + m] is a length-D mode.
std::vector<std::vector<double>> MakeCenters(const SyntheticTaskSpec& spec,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(DeriveSeed(seed, SeedStream::kCenters));
  std::normal_distribution<double> normal(0.0, spec.center_scale);
  std::vector<std::vector<double>> centers(
      static_cast<std::size_t>(spec.num_classes * spec.clusters_per_class),
      std::vector<double>(static_cast<std::size_t>(spec.input_dim)));
  for (auto& c : centers) {
    for (double& v : c) v = normal(rng);
  }
  return centers;
}

Dataset Sample(const SyntheticTaskSpec& spec,
               const std::vector<std::vector<double>>& centers,
               const std::vector<int>& preferred, double skew, int count,
               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_class(0, spec.num_classes - 1);
  std::uniform_int_distribution<int> pref_idx(
      0, static_cast<int>(preferred.size()) - 1);
  std::uniform_int_distribution<int> mode(0, spec.clusters_per_class - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  const auto n = static_cast<std::size_t>(count);
  const auto t = static_cast<std::size_t>(spec.tokens_per_sample);
  const auto d = static_cast<std::size_t>(spec.input_dim);
  Shape shape = t > 1 ? Shape{n, t, d} : Shape{n, d};
  Dataset ds{Tensor(shape), {}};
  ds.labels.reserve(n);
  auto out = ds.features.data();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool from_preferred = !preferred.empty() && unit(rng) < skew;
    const int k = from_preferred ? preferred[pref_idx(rng)] : any_class(rng);
    const auto& c =
        centers[static_cast<std::size_t>(k * spec.clusters_per_class + mode(rng))];
    for (std::size_t tok = 0; tok < t; ++tok) {
      for (std::size_t j = 0; j < d; ++j) out[pos++] = c[j] + spec.noise * noise(rng);
    }
    ds.labels.push_back(k);
  }
  return ds;
}

}  // namespace

std::vector<ClientData> GenerateClients(const SyntheticTaskSpec& spec,
                                        int num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("need at least one client");
  spec.Validate(num_clients);
  const auto centers = MakeCenters(spec, seed);
  std::vector<ClientData> out;
  out.reserve(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) {
    ClientData cd;
    cd.preferred_classes = PreferredClasses(spec, num_clients, c);
    cd.train = Sample(spec, centers, cd.preferred_classes, spec.skew,
                      spec.samples_per_client,
                      DeriveSeed(seed, SeedStream::kClientTrain,
                                 static_cast<std::uint64_t>(c)));
    cd.test = Sample(spec, centers, cd.preferred_classes, spec.skew,
                     spec.test_samples_per_client,
                     DeriveSeed(seed, SeedStream::kClientTest,
                                static_cast<std::uint64_t>(c)));
    out.push_back(std::move(cd));
  }
  return out;
}

Dataset GenerateGlobalTestSet(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  const auto centers = MakeCenters(spec, seed);
  return Sample(spec, centers, {}, 0.0, spec.global_test_samples,
                DeriveSeed(seed, SeedStream::kGlobalTest));
}

namespace {

template <typename Fn>
void ForEachChunk(const Dataset& test, Fn fn) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::size_t stop = std::min(test.size(), start + kChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(test.Batch(idx), test.BatchLabels(idx));
  }
}

}  // namespace

double Evaluate(const MoeModel& model, const Dataset& test) {
  if (test.size() == 0) throw InputError("empty test set");
  std::size_t correct = 0;
  ForEachChunk(test, [&](const Tensor& x, const std::vector<int>& y) {
    Tensor logits = model.Logits(x);
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto row = logits.row(i);
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      if (pred == y[i]) ++correct;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double EvaluateLoss(const MoeModel& model, const Dataset& test) {
  if (test.size() == 0) throw InputError("empty test set");
  double total = 0.0;
  ForEachChunk(test, [&](const Tensor& x, const std::vector<int>& y) {
    total += CrossEntropyValue(model.Logits(x), y) * static_cast<double>(y.size());
  });
  return total / static_cast<double>(test.size());
}

}  // namespace hfedmoe
