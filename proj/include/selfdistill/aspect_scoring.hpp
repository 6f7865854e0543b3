// Copyright 2026 The selfdistill Authors.
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

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfdistill/common.hpp"
#include "selfdistill/instruction_sample.hpp"

namespace selfdistill::scoring {

inline constexpr std::size_t kDefaultAspects = 10;
inline constexpr int kMaxAspectScore = 9;

// Aspect order used by the bundled scoring template. Positions are what the
// weights attach to, so the order is recorded with every run.
const std::vector<std::string>& default_aspect_names();

// Extracts exactly `aspects` integers in declared order. Lines shaped like
// "name: 7" are read by their trailing value; otherwise every number in the
// text is taken in order.
// Errors: Unparseable (no numbers, or a non-integer), WrongArity, OutOfRange.
AspectScoreVector parse_aspect_scores(std::string_view raw, std::size_t aspects = kDefaultAspects);

void validate_scores(const AspectScoreVector& x, std::size_t aspects = kDefaultAspects);

struct FitDiagnostics {
  double residual_norm = 0.0;
  double condition_estimate = 1.0;
};

struct WeightVector {
  std::vector<double> w;
  double lambda = 0.0;
  FitDiagnostics diagnostics;

  static WeightVector uniform(std::size_t aspects = kDefaultAspects) {
    return {std::vector<double>(aspects, 1.0 / static_cast<double>(aspects)), 0.0, {}};
  }
};

struct ExperimentRecord {
  std::vector<double> mean_scores;
  double performance = 0.0;
};

// sum_z w[z] * x[z]. Throws DimensionMismatch.
double aggregate_score(const AspectScoreVector& x, const WeightVector& w);

enum class Aggregation {
  kWeighted,      // learned weights
  kRawComposite,  // plain sum of the integer scores
  kAverage,       // arithmetic mean of the scores
};

Aggregation aggregation_from_string(std::string_view name);
std::string_view to_string(Aggregation a);

double aggregate(const AspectScoreVector& x, const WeightVector& w, Aggregation strategy);

// Ridge regression without intercept:
//   argmin_w sum_k (y_k - w . xbar_k)^2 + lambda ||w||^2
// solved from the normal equations (X^T X + lambda I) w = X^T y by Cholesky.
// SingularSystem only when lambda == 0 and X^T X is singular.
WeightVector fit_weights(std::span<const ExperimentRecord> experiments, double lambda);

// Component-wise mean of the scored samples' aspect vectors; samples without
// scores are skipped. Throws Empty if none are scored.
std::vector<double> mean_aspect_scores(std::span<const InstructionSample> samples);

// Highest aggregate score; ties go to the lowest (checkpoint, sample) and then
// sample_id. Candidates without valid scores are skipped. The returned copy
// carries its aggregate_score. Throws NoValidCandidates.
InstructionSample select_best_candidate(std::span<const InstructionSample> candidates, const WeightVector& w,
                                        Aggregation strategy = Aggregation::kWeighted);

json weights_to_json(const WeightVector& w);
WeightVector weights_from_json(const json& j);
ExperimentRecord experiment_from_json(const json& j);

}  // namespace selfdistill::scoring
