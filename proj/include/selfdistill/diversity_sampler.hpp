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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfdistill/common.hpp"

namespace selfdistill::sampler {

inline constexpr std::size_t kNumCategories = 10;

// Default descriptions of the ten task categories, in index order.
inline constexpr std::array<std::string_view, kNumCategories> kDefaultCategoryNames = {
    "Algorithmic and Data Structure Problems",
    "Mathematical and Computational Problems",
    "Database and SQL Problems",
    "System Design and Architecture Problems",
    "Security and Cryptography Problems",
    "Performance Optimization Problems",
    "Web Problems",
    "Domain Specific Problems",
    "User Interface and Application Design Problems",
    "Data Science and Machine Learning Problems",
};

// Ten category descriptions with unit-norm embeddings of equal dimension.
class CategorySet {
 public:
  // Throws BadCategorySet unless there are exactly ten entries of one
  // dimension, each with norm 1 +- 1e-6.
  CategorySet(std::vector<std::string> names, std::vector<std::vector<double>> embeddings);

  // Normalizes each embedding first; throws BadCategorySet on a zero vector.
  static CategorySet normalized(std::vector<std::string> names, std::vector<std::vector<double>> embeddings);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::vector<double>>& embeddings() const { return embeddings_; }
  std::size_t dimension() const { return embeddings_.front().size(); }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> embeddings_;
};

struct EmbeddingRecord {
  std::string snippet_id;
  std::vector<double> vector;
};

// argmax of cosine similarity, ties to the lowest index. A zero vector has
// cosine 0 with every category and so maps to category 0.
int assign_category(const EmbeddingRecord& e, const CategorySet& cats);

struct CategorizedSnippet {
  std::string snippet_id;
  int category = 0;
};

struct Underflow {
  int category = 0;
  std::size_t available = 0;
  std::size_t requested = 0;
};

struct Selection {
  // by_category[z] holds the ids drawn for category z, in draw order.
  std::array<std::vector<std::string>, kNumCategories> by_category;
  std::vector<Underflow> underflows;

  std::vector<std::string> all_ids() const;
  std::size_t size() const;
};

// Uniform draw without replacement of up to per_category members of each
// category. Members are ordered by id before drawing, so the result depends
// only on the pool contents and the seed. Duplicate ids count once.
Selection stratified_sample(std::span<const CategorizedSnippet> pool, std::size_t per_category, std::uint64_t seed);

// {name, vector} records -> CategorySet (normalized).
CategorySet category_set_from_json(const std::vector<json>& records);
EmbeddingRecord embedding_from_json(const json& record);

}  // namespace selfdistill::sampler
