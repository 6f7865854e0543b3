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

#include "selfdistill/diversity_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace selfdistill::sampler {
namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

CategorySet::CategorySet(std::vector<std::string> names, std::vector<std::vector<double>> embeddings)
    : names_(std::move(names)), embeddings_(std::move(embeddings)) {
  if (names_.size() != kNumCategories || embeddings_.size() != kNumCategories) {
    throw Error(ErrorCode::kBadCategorySet, "exactly 10 categories are required");
  }
  const std::size_t dim = embeddings_.front().size();
  if (dim == 0) throw Error(ErrorCode::kBadCategorySet, "empty category embedding");
  for (const auto& e : embeddings_) {
    if (e.size() != dim) throw Error(ErrorCode::kBadCategorySet, "category embeddings differ in dimension");
    const double n = norm2(e);
    if (!(std::abs(n - 1.0) <= 1e-6)) throw Error(ErrorCode::kBadCategorySet, "category embedding is not unit norm");
  }
}

CategorySet CategorySet::normalized(std::vector<std::string> names, std::vector<std::vector<double>> embeddings) {
  for (auto& e : embeddings) {
    const double n = norm2(e);
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::kBadCategorySet, "zero or non-finite embedding");
    for (double& x : e) x /= n;
  }
  return CategorySet(std::move(names), std::move(embeddings));
}

int assign_category(const EmbeddingRecord& e, const CategorySet& cats) {
  if (e.vector.size() != cats.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding has dimension " + std::to_string(e.vector.size()) +
                                                   ", categories have " + std::to_string(cats.dimension()));
  }
  const double en = norm2(e.vector);
  int best = 0;
  double best_cos = -2.0;
  for (std::size_t z = 0; z < kNumCategories; ++z) {
    const auto& c = cats.embeddings()[z];
    double dot = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) dot += e.vector[i] * c[i];
    const double cn = norm2(c);
    const double cos = (en > 0.0 && cn > 0.0) ? dot / (en * cn) : 0.0;
    if (cos > best_cos) {
      best_cos = cos;
      best = static_cast<int>(z);
    }
  }
  return best;
}

std::vector<std::string> Selection::all_ids() const {
  std::vector<std::string> out;
  for (const auto& ids : by_category) out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

std::size_t Selection::size() const {
  std::size_t n = 0;
  for (const auto& ids : by_category) n += ids.size();
  return n;
}

Selection stratified_sample(std::span<const CategorizedSnippet> pool, std::size_t per_category, std::uint64_t seed) {
  std::array<std::vector<std::string>, kNumCategories> members;
  for (const auto& s : pool) {
    if (s.category < 0 || s.category >= static_cast<int>(kNumCategories)) {
      throw Error(ErrorCode::kInvalidArgument, "category out of range for " + s.snippet_id);
    }
    members[static_cast<std::size_t>(s.category)].push_back(s.snippet_id);
  }
  Selection sel;
  for (std::size_t z = 0; z < kNumCategories; ++z) {
    auto& ids = members[z];
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (per_category == 0) continue;
    if (ids.size() < per_category) sel.underflows.push_back({static_cast<int>(z), ids.size(), per_category});
    // Partial Fisher-Yates over the sorted members.
    Rng rng(hash_combine(seed, z));
    const std::size_t take = std::min(per_category, ids.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(ids.size() - i));
      std::swap(ids[i], ids[j]);
    }
    sel.by_category[z].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return sel;
}

CategorySet category_set_from_json(const std::vector<json>& records) {
  std::vector<std::string> names;
  std::vector<std::vector<double>> vecs;
  for (const auto& r : records) {
    if (!r.contains("name") || !r.contains("vector")) {
      throw Error(ErrorCode::kFormatError, "category record needs name and vector");
    }
    names.push_back(r["name"].get<std::string>());
    vecs.push_back(r["vector"].get<std::vector<double>>());
  }
  return CategorySet::normalized(std::move(names), std::move(vecs));
}

EmbeddingRecord embedding_from_json(const json& record) {
  if (!record.contains("snippet_id") || !record.contains("vector")) {
    throw Error(ErrorCode::kFormatError, "embedding record needs snippet_id and vector");
  }
  return {record["snippet_id"].get<std::string>(), record["vector"].get<std::vector<double>>()};
}

}  // namespace selfdistill::sampler
