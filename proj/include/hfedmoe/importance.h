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

// Per-batch expert importance from routing scores.
//
// For an expert e over the B routing units of a batch, with G_i = G_e(x_i):
//   cumulative  = mean_i G_i
//   specific    = max_i G_i
//   combined    = lambda * cumulative + (1 - lambda) * specific
//   marginal    = mean_i G_i                       (activation prior p(z_e))
//   kl          = mean_i G_i * ln((G_i + eps) / (marginal + eps))
//   ib_score    = combined - beta * kl
//
// ib_score is the per-expert information-bottleneck contribution used to
// rank experts for budgeted backward passes: high routing mass with little
// input-specific redundancy.

#ifndef HFEDMOE_IMPORTANCE_H_
#define HFEDMOE_IMPORTANCE_H_

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hfedmoe/moe.h"

namespace hfedmoe {

struct ImportanceConfig {
  double lambda = 0.9;
  double beta = 0.1;
  double epsilon = 1e-12;

  // Throws ConfigError outside lambda in [0,1], beta >= 0, epsilon > 0.
  void Validate() const;
};

struct ExpertImportance {
  double s_cumul = 0.0;
  double s_specific = 0.0;
  double s_combined = 0.0;
  double marginal = 0.0;
  double kl_term = 0.0;
  double ib_score = 0.0;
};

// One entry per expert, indexed layer * S + index.
struct ImportanceReport {
  int num_layers = 0;
  int experts_per_layer = 0;
  std::vector<ExpertImportance> experts;

  const ExpertImportance& at(const ExpertKey& e) const {
    return experts[static_cast<std::size_t>(e.layer * experts_per_layer +
                                            e.index)];
  }
  ExpertImportance& at(const ExpertKey& e) {
    return experts[static_cast<std::size_t>(e.layer * experts_per_layer +
                                            e.index)];
  }
};

// Conditional scores {G_e(x_i)} for one expert, in unit order.
std::vector<double> ExpertScores(const RoutingRecord& record, const ExpertKey& e);

double CumulativeImportance(const RoutingRecord& record, const ExpertKey& e);
double SpecificImportance(const RoutingRecord& record, const ExpertKey& e);
double CombinedImportance(double s_cumul, double s_specific,
                          const ImportanceConfig& cfg);

struct IbContribution {
  double kl_term = 0.0;
  double ib_score = 0.0;
};
IbContribution IbContributionOf(const RoutingRecord& record, const ExpertKey& e,
                                const ImportanceConfig& cfg);

// Throws InputError for a record with no units.
ImportanceReport BuildReport(const RoutingRecord& record,
                             const ImportanceConfig& cfg);

// CSV: round,client,layer,expert,s_cumul,s_specific,s,kl,ib
void WriteImportanceCsvHeader(std::ostream& os);
void WriteImportanceCsvRows(std::ostream& os, int round,
                            const std::string& client,
                            const ImportanceReport& report);

}  // namespace hfedmoe

#endif  // HFEDMOE_IMPORTANCE_H_
