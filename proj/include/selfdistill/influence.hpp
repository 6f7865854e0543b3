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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selfdistill/common.hpp"
#include "selfdistill/instruction_sample.hpp"

namespace selfdistill::influence {

// Implicit d x k Rademacher matrix with entries +-scale. Entry (row, col) is a
// pure function of (seed, row, col); the matrix is never materialized.
struct ProjectionConfig {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::uint64_t seed = 0;
  double scale = 0.0;  // 1/sqrt(k) unless overridden

  // +1 or -1 (unscaled).
  int sign(std::size_t row, std::size_t col) const;
  double entry(std::size_t row, std::size_t col) const { return scale * sign(row, col); }
};

// Throws BadDims unless 1 <= k <= d.
ProjectionConfig build_projection(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed);

// Packed signs of columns [64*word, 64*word + 64) for one row; bit set = +1.
std::uint64_t sign_word(std::uint64_t seed, std::size_t row, std::size_t word);

enum class ProviderTag { kToy, kImported };

struct GradientVector {
  std::string sample_id;
  std::vector<double> values;
  ProviderTag provider_tag = ProviderTag::kToy;
};

struct ProjectedGradient {
  std::string sample_id;
  std::vector<double> values;
  std::uint64_t projection_seed = 0;
  double norm = 0.0;
};

// out[c] = scale * sum_r sign(seed, r, c) * g[r]. One pass over g per block
// of 4096 output columns. Throws BadDims on a length mismatch.
std::vector<double> project_values(std::span<const double> g, const ProjectionConfig& p);
ProjectedGradient project_gradient(const GradientVector& g, const ProjectionConfig& p);

// Component-wise mean. Throws Empty, or MixedProjections when lengths or
// projection seeds differ.
std::vector<double> anchor_gradient(std::span<const ProjectedGradient> proprietary);

struct InfluenceRecord {
  std::string sample_id;
  double influence = 0.0;  // cosine, in [-1, 1]
};

double cosine(std::span<const double> a, std::span<const double> b);

// Cosine between the sample's projected gradient and the anchor. Throws
// DimensionMismatch, or ZeroVector if either norm is below 1e-12.
InfluenceRecord influence_score(const ProjectedGradient& g, std::span<const double> anchor);

struct TopSelection {
  std::vector<std::string> sample_ids;  // highest influence first
  bool shortfall = false;
};

// The `quota` highest-influence records; ties by ascending sample_id.
TopSelection select_top_influential(std::span<const InfluenceRecord> records, std::size_t quota);

// Source of per-sample reference-model gradients.
class GradientProvider {
 public:
  virtual ~GradientProvider() = default;
  virtual std::size_t dimension() const = 0;
  virtual GradientVector gradient(const InstructionSample& sample) const = 0;
};

}  // namespace selfdistill::influence
