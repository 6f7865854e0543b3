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

#include "selfdistill/influence.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace selfdistill::influence {
namespace {

constexpr std::size_t kBlockColumns = 4096;
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// kSignTable[byte][t] = +1 if bit t of byte is set, else -1.
const std::array<std::array<double, 8>, 256>& sign_table() {
  static const auto table = [] {
    std::array<std::array<double, 8>, 256> t{};
    for (int b = 0; b < 256; ++b) {
      for (int i = 0; i < 8; ++i) t[b][i] = ((b >> i) & 1) ? 1.0 : -1.0;
    }
    return t;
  }();
  return table;
}

std::uint64_t row_key(std::uint64_t seed, std::size_t row) { return hash_combine(seed, row); }

}  // namespace

std::uint64_t sign_word(std::uint64_t seed, std::size_t row, std::size_t word) {
  return mix64(row_key(seed, row) + static_cast<std::uint64_t>(word) * kGolden);
}

int ProjectionConfig::sign(std::size_t row, std::size_t col) const {
  return (sign_word(seed, row, col >> 6) >> (col & 63)) & 1 ? 1 : -1;
}

ProjectionConfig build_projection(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed) {
  if (output_dim < 1 || output_dim > input_dim) {
    throw Error(ErrorCode::kBadDims, "projection needs 1 <= k <= d, got d=" + std::to_string(input_dim) +
                                         " k=" + std::to_string(output_dim));
  }
  ProjectionConfig p;
  p.input_dim = input_dim;
  p.output_dim = output_dim;
  p.seed = seed;
  p.scale = 1.0 / std::sqrt(static_cast<double>(output_dim));
  return p;
}

std::vector<double> project_values(std::span<const double> g, const ProjectionConfig& p) {
  if (g.size() != p.input_dim) {
    throw Error(ErrorCode::kBadDims,
                "gradient length " + std::to_string(g.size()) + " != projection input " + std::to_string(p.input_dim));
  }
  const auto& table = sign_table();
  const std::size_t k = p.output_dim;
  std::vector<double> out(k, 0.0);
  std::vector<std::uint64_t> keys(g.size());
  for (std::size_t r = 0; r < g.size(); ++r) keys[r] = row_key(p.seed, r);

  for (std::size_t c0 = 0; c0 < k; c0 += kBlockColumns) {
    const std::size_t c1 = std::min(k, c0 + kBlockColumns);
    const std::size_t w0 = c0 >> 6;
    const std::size_t w1 = (c1 + 63) >> 6;
    double* acc = out.data();
    for (std::size_t r = 0; r < g.size(); ++r) {
      const double v = g[r];
      if (v == 0.0) continue;
      for (std::size_t w = w0; w < w1; ++w) {
        const std::uint64_t bits = mix64(keys[r] + static_cast<std::uint64_t>(w) * kGolden);
        const std::size_t base = w << 6;
        if (base + 64 <= c1) {
          for (int b = 0; b < 8; ++b) {
            const auto& s = table[(bits >> (8 * b)) & 0xff];
            double* dst = acc + base + 8 * b;
            for (int t = 0; t < 8; ++t) dst[t] += v * s[t];
          }
        } else {
          for (std::size_t c = base; c < c1; ++c) acc[c] += ((bits >> (c - base)) & 1) ? v : -v;
        }
      }
    }
  }
  for (double& x : out) x *= p.scale;
  return out;
}

ProjectedGradient project_gradient(const GradientVector& g, const ProjectionConfig& p) {
  ProjectedGradient out;
  out.sample_id = g.sample_id;
  out.values = project_values(g.values, p);
  out.projection_seed = p.seed;
  out.norm = std::sqrt(std::inner_product(out.values.begin(), out.values.end(), out.values.begin(), 0.0));
  return out;
}

std::vector<double> anchor_gradient(std::span<const ProjectedGradient> proprietary) {
  if (proprietary.empty()) throw Error(ErrorCode::kEmpty, "anchor needs at least one proprietary gradient");
  const std::size_t k = proprietary.front().values.size();
  const std::uint64_t seed = proprietary.front().projection_seed;
  std::vector<double> sum(k, 0.0);
  for (const auto& g : proprietary) {
    if (g.values.size() != k || g.projection_seed != seed) {
      throw Error(ErrorCode::kMixedProjections, "projected gradient " + g.sample_id + " uses a different projection");
    }
    for (std::size_t i = 0; i < k; ++i) sum[i] += g.values[i];
  }
  const double n = static_cast<double>(proprietary.size());
  for (double& x : sum) x /= n;
  return sum;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine of vectors with lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) throw Error(ErrorCode::kZeroVector, "cosine with a zero vector");
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

InfluenceRecord influence_score(const ProjectedGradient& g, std::span<const double> anchor) {
  return {g.sample_id, cosine(g.values, anchor)};
}

TopSelection select_top_influential(std::span<const InfluenceRecord> records, std::size_t quota) {
  std::vector<const InfluenceRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  const std::size_t take = std::min(quota, order.size());
  auto better = [](const InfluenceRecord* a, const InfluenceRecord* b) {
    if (a->influence != b->influence) return a->influence > b->influence;
    return a->sample_id < b->sample_id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  TopSelection sel;
  sel.shortfall = records.size() < quota;
  for (std::size_t i = 0; i < take; ++i) sel.sample_ids.push_back(order[i]->sample_id);
  return sel;
}

}  // namespace selfdistill::influence
