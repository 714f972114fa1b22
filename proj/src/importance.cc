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

#include "hfedmoe/importance.h"

#include <algorithm>
#include <cmath>

#include "hfedmoe/csv.h"
#include "hfedmoe/errors.h"

namespace hfedmoe {

void ImportanceConfig::Validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must lie in [0, 1]");
  }
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
}

namespace {

void CheckKey(const RoutingRecord& record, const ExpertKey& e) {
  if (record.num_units < 1) throw InputError("empty batch");
  if (e.layer < 0 || e.layer >= record.num_layers || e.index < 0 ||
      e.index >= record.num_experts) {
    throw InputError("expert key outside routing record bounds");
  }
}

double Mean(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  // Rounding can push the mean of near-equal values past their range.
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return std::clamp(sum / static_cast<double>(v.size()), *lo, *hi);
}

}  // namespace

std::vector<double> ExpertScores(const RoutingRecord& record,
                                 const ExpertKey& e) {
  CheckKey(record, e);
  std::vector<double> out(static_cast<std::size_t>(record.num_units));
  for (int u = 0; u < record.num_units; ++u) out[u] = record.score(e, u);
  return out;
}

double CumulativeImportance(const RoutingRecord& record, const ExpertKey& e) {
  return Mean(ExpertScores(record, e));
}

double SpecificImportance(const RoutingRecord& record, const ExpertKey& e) {
  std::vector<double> s = ExpertScores(record, e);
  return *std::max_element(s.begin(), s.end());
}

double CombinedImportance(double s_cumul, double s_specific,
                          const ImportanceConfig& cfg) {
  return cfg.lambda * s_cumul + (1.0 - cfg.lambda) * s_specific;
}

namespace {

double KlTerm(std::span<const double> scores, double marginal, double eps) {
  // A constant column equals its marginal; the rounded mean would otherwise
  // leave a residue of a few ulp.
  if (std::all_of(scores.begin(), scores.end(),
                  [&](double g) { return g == scores[0]; })) {
    return 0.0;
  }
  // Each summand adds k * (g - marginal) with k = marginal / (marginal + eps).
  // Those additions cancel over the column, and every summand becomes a
  // convex function of g with minimum 0 at the marginal, so near-uniform
  // columns keep a small positive value instead of rounding noise.
  const double b = marginal + eps;
  const double k = marginal / b;
  double sum = 0.0;
  for (double g : scores) {
    const double d = g - marginal;
    sum += std::max(0.0, g * std::log1p(d / b) - k * d);
  }
  return sum / static_cast<double>(scores.size());
}

ExpertImportance Score(std::span<const double> scores,
                       const ImportanceConfig& cfg) {
  ExpertImportance r;
  r.s_cumul = Mean(scores);
  r.s_specific = *std::max_element(scores.begin(), scores.end());
  r.s_combined = CombinedImportance(r.s_cumul, r.s_specific, cfg);
  r.marginal = r.s_cumul;
  r.kl_term = KlTerm(scores, r.marginal, cfg.epsilon);
  r.ib_score = r.s_combined - cfg.beta * r.kl_term;
  return r;
}

}  // namespace

IbContribution IbContributionOf(const RoutingRecord& record, const ExpertKey& e,
                                const ImportanceConfig& cfg) {
  std::vector<double> s = ExpertScores(record, e);
  ExpertImportance r = Score(s, cfg);
  return IbContribution{r.kl_term, r.ib_score};
}

ImportanceReport BuildReport(const RoutingRecord& record,
                             const ImportanceConfig& cfg) {
  if (record.num_units < 1) throw InputError("empty batch");
  ImportanceReport report;
  report.num_layers = record.num_layers;
  report.experts_per_layer = record.num_experts;
  report.experts.reserve(
      static_cast<std::size_t>(record.num_layers * record.num_experts));
  std::vector<double> scores(static_cast<std::size_t>(record.num_units));
  for (int l = 0; l < record.num_layers; ++l) {
    for (int s = 0; s < record.num_experts; ++s) {
      for (int u = 0; u < record.num_units; ++u) scores[u] = record.score(l, u, s);
      report.experts.push_back(Score(scores, cfg));
    }
  }
  return report;
}

void WriteImportanceCsvHeader(std::ostream& os) {
  os << "round,client,layer,expert,s_cumul,s_specific,s,kl,ib\n";
}

void WriteImportanceCsvRows(std::ostream& os, int round,
                            const std::string& client,
                            const ImportanceReport& report) {
  for (int l = 0; l < report.num_layers; ++l) {
    for (int s = 0; s < report.experts_per_layer; ++s) {
      const ExpertImportance& e = report.at({l, s});
      os << round << ',' << client << ',' << l << ',' << s << ','
         << FormatDouble(e.s_cumul) << ',' << FormatDouble(e.s_specific) << ','
         << FormatDouble(e.s_combined) << ',' << FormatDouble(e.kl_term) << ','
         << FormatDouble(e.ib_score) << '\n';
    }
  }
}

}  // namespace hfedmoe
