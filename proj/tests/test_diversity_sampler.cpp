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

#include <cmath>
#include <random>
#include <map>
#include <set>

#include "doctest.h"
#include "selfdistill/diversity_sampler.hpp"

using namespace selfdistill;
using namespace selfdistill::sampler;

namespace {

std::vector<std::string> default_names() {
  return std::vector<std::string>(kDefaultCategoryNames.begin(), kDefaultCategoryNames.end());
}

CategorySet basis_categories(std::size_t dim) {
  std::vector<std::vector<double>> e(kNumCategories, std::vector<double>(dim, 0.0));
  for (std::size_t z = 0; z < kNumCategories; ++z) e[z][z] = 1.0;
  return CategorySet(default_names(), e);
}

CategorySet random_categories(std::mt19937_64& gen, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> e(kNumCategories, std::vector<double>(dim));
  for (auto& v : e) {
    for (auto& x : v) x = nd(gen);
  }
  return CategorySet::normalized(default_names(), e);
}

int oracle_argmax(const std::vector<double>& v, const CategorySet& cats) {
  // Independent route: compare normalized dot products via long double.
  long double vn = 0;
  for (double x : v) vn += static_cast<long double>(x) * x;
  vn = std::sqrt(vn);
  int best = -1;
  long double best_val = -10;
  for (int z = 9; z >= 0; --z) {
    long double dot = 0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += static_cast<long double>(v[i]) * cats.embeddings()[z][i];
    const long double c = dot / vn;
    if (c >= best_val) {
      best_val = c;
      best = z;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("category set invariants") {
  CHECK_NOTHROW(basis_categories(12));
  std::vector<std::vector<double>> e(kNumCategories, std::vector<double>(3, 0.0));
  for (auto& v : e) v[0] = 2.0;
  CHECK_THROWS_AS(CategorySet(default_names(), e), Error);
  CHECK_NOTHROW(CategorySet::normalized(default_names(), e));
  e.pop_back();
  CHECK_THROWS_AS(CategorySet::normalized(default_names(), e), Error);
  std::vector<std::vector<double>> mixed(kNumCategories, std::vector<double>{1.0});
  mixed[4] = {1.0, 0.0};
  CHECK_THROWS_AS(CategorySet(default_names(), mixed), Error);
}

TEST_CASE("assign_category: self-similarity and orthogonality") {
  const auto cats = basis_categories(16);
  EmbeddingRecord e{"s", cats.embeddings()[3]};
  CHECK(assign_category(e, cats) == 3);
  std::vector<double> v(16, 0.0);
  v[7] = 0.3;
  v[12] = 5.0;  // outside every category's support
  CHECK(assign_category({"s", v}, cats) == 7);
  CHECK_THROWS_AS(assign_category({"s", std::vector<double>(5, 1.0)}, cats), Error);
}

TEST_CASE("assign_category ties go to the lowest index") {
  const auto cats = basis_categories(10);
  std::vector<double> v(10, 0.0);
  v[2] = 1.0;
  v[6] = 1.0;
  CHECK(assign_category({"s", v}, cats) == 2);
}

TEST_CASE("assign_category matches a brute-force cosine argmax on 200 random embeddings") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  const auto cats = random_categories(gen, 32);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(32);
    for (auto& x : v) x = nd(gen);
    CHECK(assign_category({"s", v}, cats) == oracle_argmax(v, cats));
    // Positive rescaling leaves the argmax unchanged.
    const double lambda = std::exp(nd(gen) * 3.0);
    auto scaled = v;
    for (auto& x : scaled) x *= lambda;
    CHECK(assign_category({"s", scaled}, cats) == assign_category({"s", v}, cats));
  }
}

TEST_CASE("stratified_sample basics") {
  std::vector<CategorizedSnippet> pool;
  for (int z = 0; z < 10; ++z) {
    for (int k = 0; k < 5; ++k) pool.push_back({"id" + std::to_string(z) + "_" + std::to_string(k), z});
  }
  SUBCASE("per_category = 0 selects nothing") { CHECK(stratified_sample(pool, 0, 1).size() == 0); }
  SUBCASE("exact fill selects the whole pool") {
    const auto sel = stratified_sample(pool, 5, 1);
    CHECK(sel.size() == pool.size());
    CHECK(sel.underflows.empty());
  }
  SUBCASE("underflow takes all and warns") {
    const auto sel = stratified_sample(pool, 7, 1);
    CHECK(sel.size() == pool.size());
    REQUIRE(sel.underflows.size() == 10);
    CHECK(sel.underflows[0].available == 5);
    CHECK(sel.underflows[0].requested == 7);
  }
  SUBCASE("bad category index") {
    std::vector<CategorizedSnippet> bad = {{"x", 10}};
    CHECK_THROWS_AS(stratified_sample(bad, 1, 1), Error);
  }
}

TEST_CASE("stratified_sample determinism, seed sensitivity and disjointness") {
  std::vector<CategorizedSnippet> pool;
  for (int z = 0; z < 10; ++z) {
    for (int k = 0; k < 100; ++k) pool.push_back({"s" + std::to_string(z * 1000 + k), z});
  }
  const auto a = stratified_sample(pool, 10, 42);
  const auto b = stratified_sample(pool, 10, 42);
  CHECK(a.all_ids() == b.all_ids());
  int differ = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    differ += stratified_sample(pool, 10, seed).all_ids() != stratified_sample(pool, 10, seed + 1000).all_ids();
  }
  CHECK(differ == 100);

  const auto ids = a.all_ids();
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size());
  for (const auto& per : a.by_category) CHECK(per.size() <= 10);

  // Input order does not matter.
  auto shuffled = pool;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
  CHECK(stratified_sample(shuffled, 10, 42).all_ids() == a.all_ids());
}

TEST_CASE("stratified_sample draws are roughly uniform") {
  std::vector<CategorizedSnippet> pool;
  for (int k = 0; k < 20; ++k) pool.push_back({"m" + std::to_string(10 + k), 0});
  std::map<std::string, int> counts;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    const auto sel = stratified_sample(pool, 5, seed);
    for (const auto& id : sel.by_category[0]) counts[id]++;
  }
  // Expected 1000 per member; 6 sigma is about 165.
  for (const auto& [id, c] : counts) CHECK(std::abs(c - 1000) < 170);
}

TEST_CASE("json loaders") {
  std::vector<json> recs;
  for (int z = 0; z < 10; ++z) {
    json r;
    r["name"] = "c" + std::to_string(z);
    r["vector"] = std::vector<double>{z + 1.0, 1.0};
    recs.push_back(r);
  }
  const auto cats = category_set_from_json(recs);
  CHECK(cats.names()[9] == "c9");
  json e_rec;
  e_rec["snippet_id"] = "a";
  e_rec["vector"] = std::vector<double>{1.0, 0.0};
  CHECK(embedding_from_json(e_rec).vector.size() == 2);
  e_rec.erase("snippet_id");
  CHECK_THROWS_AS(embedding_from_json(e_rec), Error);
}
