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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "doctest.h"
#include "selfdistill/gradient_io.hpp"
#include "selfdistill/influence.hpp"
#include "selfdistill/toy_model.hpp"

using namespace selfdistill;
using namespace selfdistill::influence;

namespace {

std::vector<double> gaussian(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(gen);
  return v;
}

// Materialized d x k matrix times g.
std::vector<double> dense_project(const std::vector<double>& g, const ProjectionConfig& p) {
  std::vector<std::vector<double>> m(p.input_dim, std::vector<double>(p.output_dim));
  for (std::size_t r = 0; r < p.input_dim; ++r) {
    for (std::size_t c = 0; c < p.output_dim; ++c) m[r][c] = p.entry(r, c);
  }
  std::vector<double> out(p.output_dim, 0.0);
  for (std::size_t c = 0; c < p.output_dim; ++c) {
    long double acc = 0;
    for (std::size_t r = 0; r < p.input_dim; ++r) acc += static_cast<long double>(m[r][c]) * g[r];
    out[c] = static_cast<double>(acc);
  }
  return out;
}

long double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

InstructionSample text_sample(const std::string& id, const std::string& q, const std::string& s) {
  InstructionSample x;
  x.sample_id = id;
  x.problem = q;
  x.solution = s;
  return x;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sd_influence_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("build_projection validates dimensions") {
  CHECK_THROWS_AS(build_projection(4, 0, 1), Error);
  CHECK_THROWS_AS(build_projection(4, 5, 1), Error);
  const auto p = build_projection(16, 4, 9);
  CHECK(p.scale == doctest::Approx(0.5));
  CHECK(p.sign(3, 2) == p.sign(3, 2));
  CHECK(std::abs(p.entry(1, 1)) == doctest::Approx(0.5));
}

TEST_CASE("projection signs are balanced and seed-dependent") {
  const auto p = build_projection(1 << 20, 1024, 12345);
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<std::size_t> row(0, p.input_dim - 1), col(0, p.output_dim - 1);
  int plus = 0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) plus += p.sign(row(gen), col(gen)) > 0;
  CHECK(std::abs(plus / double(n) - 0.5) <= 0.01);

  const auto q = build_projection(1 << 20, 1024, 12346);
  int differ = 0;
  const int m = 100'000;
  for (int i = 0; i < m; ++i) {
    const auto r = row(gen), c = col(gen);
    differ += p.sign(r, c) != q.sign(r, c);
  }
  CHECK(std::abs(differ / double(m) - 0.5) <= 0.01);
}

TEST_CASE("project_gradient matches a materialized matrix multiply") {
  std::mt19937_64 gen(3);
  for (auto [d, k] : {std::pair<std::size_t, std::size_t>{4, 2}, {300, 130}, {64, 64}, {4500, 4500}}) {
    const auto p = build_projection(d, k, 1000 + d);
    const auto g = gaussian(gen, d);
    const auto fast = project_values(g, p);
    const auto slow = dense_project(g, p);
    REQUIRE(fast.size() == k);
    double worst = 0;
    for (std::size_t c = 0; c < k; ++c) worst = std::max(worst, std::abs(fast[c] - slow[c]));
    CHECK(worst < 1e-9);
  }
  const auto p = build_projection(8, 3, 1);
  CHECK(project_values(std::vector<double>(8, 0.0), p) == std::vector<double>(3, 0.0));
  CHECK_THROWS_AS(project_values(std::vector<double>(7, 1.0), p), Error);
}

TEST_CASE("projection is linear") {
  std::mt19937_64 gen(8);
  const auto p = build_projection(2000, 256, 5);
  const auto g1 = gaussian(gen, 2000), g2 = gaussian(gen, 2000);
  const double a = 1.7, b = -0.3;
  std::vector<double> mix(2000);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * g1[i] + b * g2[i];
  const auto pm = project_values(mix, p), p1 = project_values(g1, p), p2 = project_values(g2, p);
  double err = 0, ref = 0;
  for (std::size_t c = 0; c < pm.size(); ++c) {
    const double expect = a * p1[c] + b * p2[c];
    err = std::max(err, std::abs(pm[c] - expect));
    ref = std::max(ref, std::abs(expect));
  }
  CHECK(err <= 1e-9 * ref);
}

TEST_CASE("projected gradients carry seed and norm") {
  std::mt19937_64 gen(2);
  GradientVector g{"x", gaussian(gen, 100), ProviderTag::kToy};
  const auto p = build_projection(100, 20, 44);
  const auto pg = project_gradient(g, p);
  CHECK(pg.projection_seed == 44);
  double n = 0;
  for (double v : pg.values) n += v * v;
  CHECK(pg.norm == doctest::Approx(std::sqrt(n)).epsilon(1e-14));
  CHECK(project_gradient(g, p).values == pg.values);
}

TEST_CASE("projection roughly preserves squared distances") {
  std::mt19937_64 gen(10);
  const auto p = build_projection(4096, 1024, 99);
  int ok = 0;
  for (int i = 0; i < 40; ++i) {
    const auto a = gaussian(gen, 4096), b = gaussian(gen, 4096);
    const auto pa = project_values(a, p), pb = project_values(b, p);
    double exact = 0, proj = 0;
    for (std::size_t r = 0; r < a.size(); ++r) exact += (a[r] - b[r]) * (a[r] - b[r]);
    for (std::size_t c = 0; c < pa.size(); ++c) proj += (pa[c] - pb[c]) * (pa[c] - pb[c]);
    ok += std::abs(proj / exact - 1.0) <= 0.2;
  }
  CHECK(ok >= 38);
}

TEST_CASE("anchor_gradient") {
  std::mt19937_64 gen(4);
  ProjectedGradient v{"a", gaussian(gen, 8), 1, 0};
  CHECK(anchor_gradient(std::vector{v}) == v.values);
  auto neg = v;
  for (auto& x : neg.values) x = -x;
  for (double x : anchor_gradient(std::vector{v, neg})) CHECK(x == 0.0);

  std::vector<ProjectedGradient> many;
  for (int i = 0; i < 100; ++i) many.push_back({"g" + std::to_string(i), gaussian(gen, 16), 1, 0});
  const auto mean = anchor_gradient(many);
  for (std::size_t c = 0; c < 16; ++c) {
    long double s = 0;
    for (const auto& g : many) s += g.values[c];
    CHECK(std::abs(mean[c] - static_cast<double>(s / 100)) <= 1e-12);
  }
  CHECK_THROWS_AS(anchor_gradient(std::vector<ProjectedGradient>{}), Error);
  auto other_seed = v;
  other_seed.projection_seed = 2;
  CHECK_THROWS_AS(anchor_gradient(std::vector{v, other_seed}), Error);
  auto other_k = v;
  other_k.values.pop_back();
  CHECK_THROWS_AS(anchor_gradient(std::vector{v, other_k}), Error);
}

TEST_CASE("influence_score is a cosine") {
  const std::vector<double> anchor{1.0, 2.0, 0.0};
  CHECK(influence_score({"p", {2.0, 4.0, 0.0}, 0, 0}, anchor).influence == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(influence_score({"o", {-2.0, 1.0, 3.0}, 0, 0}, anchor).influence == doctest::Approx(0.0));
  CHECK_THROWS_AS(influence_score({"z", {0.0, 0.0, 0.0}, 0, 0}, anchor), Error);
  CHECK_THROWS_AS(influence_score({"p", {1.0, 1.0, 1.0}, 0, 0}, std::vector<double>(3, 0.0)), Error);
  CHECK_THROWS_AS(influence_score({"p", {1.0, 1.0}, 0, 0}, anchor), Error);

  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int i = 0; i < 200; ++i) {
    const auto a = gaussian(gen, 32), b = gaussian(gen, 32);
    const double v = influence_score({"r", a, 0, 0}, b).influence;
    CHECK(std::abs(v - static_cast<double>(oracle_cosine(a, b))) <= 1e-12);
    CHECK(std::abs(v) <= 1.0 + 1e-9);
    auto scaled = a;
    const double s = scale(gen);
    for (auto& x : scaled) x *= s;
    CHECK(std::abs(influence_score({"r", scaled, 0, 0}, b).influence - v) <= 1e-12);
  }
}

TEST_CASE("select_top_influential") {
  std::vector<InfluenceRecord> recs{{"a", 0.9}, {"b", 0.1}, {"c", 0.5}};
  auto sel = select_top_influential(recs, 2);
  CHECK(sel.sample_ids == std::vector<std::string>{"a", "c"});
  CHECK_FALSE(sel.shortfall);
  sel = select_top_influential(recs, 5);
  CHECK(sel.sample_ids.size() == 3);
  CHECK(sel.shortfall);
  std::vector<InfluenceRecord> ties{{"z", 0.5}, {"m", 0.5}, {"a", 0.1}};
  CHECK(select_top_influential(ties, 1).sample_ids == std::vector<std::string>{"m"});

  std::mt19937_64 gen(12);
  std::uniform_int_distribution<int> level(0, 50);
  std::vector<InfluenceRecord> many;
  for (int i = 0; i < 1000; ++i) many.push_back({"s" + std::to_string(gen() % 100000), level(gen) / 50.0 - 0.5});
  auto oracle = many;
  std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) {
    return x.influence != y.influence ? x.influence > y.influence : x.sample_id < y.sample_id;
  });
  const auto top = select_top_influential(many, 137);
  REQUIRE(top.sample_ids.size() == 137);
  for (std::size_t i = 0; i < 137; ++i) CHECK(top.sample_ids[i] == oracle[i].sample_id);
}

TEST_CASE("ranking through a k=64 projection tracks the exact ranking") {
  std::mt19937_64 gen(21);
  const std::size_t d = 256, k = 64;
  const auto direction = gaussian(gen, d);
  std::uniform_real_distribution<double> alpha(-1.5, 1.5);
  std::vector<std::vector<double>> proprietary, self;
  for (int i = 0; i < 20; ++i) {
    auto g = gaussian(gen, d);
    for (std::size_t r = 0; r < d; ++r) g[r] = 2.0 * direction[r] + g[r];
    proprietary.push_back(g);
  }
  for (int i = 0; i < 50; ++i) {
    auto g = gaussian(gen, d);
    const double a = alpha(gen);
    for (std::size_t r = 0; r < d; ++r) g[r] += a * direction[r];
    self.push_back(g);
  }
  std::vector<double> exact_anchor(d, 0.0);
  for (const auto& g : proprietary) {
    for (std::size_t r = 0; r < d; ++r) exact_anchor[r] += g[r] / proprietary.size();
  }
  const auto p = build_projection(d, k, 2024);
  std::vector<ProjectedGradient> pp;
  for (const auto& g : proprietary) pp.push_back(project_gradient({"p", g, ProviderTag::kToy}, p));
  const auto anchor = anchor_gradient(pp);
  std::vector<double> exact, approx;
  for (const auto& g : self) {
    exact.push_back(static_cast<double>(oracle_cosine(g, exact_anchor)));
    approx.push_back(influence_score(project_gradient({"s", g, ProviderTag::kToy}, p), anchor).influence);
  }
  int agree = 0, pairs = 0;
  for (std::size_t i = 0; i < self.size(); ++i) {
    for (std::size_t j = i + 1; j < self.size(); ++j) {
      ++pairs;
      agree += (exact[i] - exact[j]) * (approx[i] - approx[j]) > 0;
    }
  }
  MESSAGE("pairwise agreement " << agree << "/" << pairs);
  CHECK(agree >= 0.9 * pairs);
}

TEST_CASE("toy model training") {
  std::vector<InstructionSample> corpus{text_sample("a", "abababababababab", "abababababab")};
  ToyTrainingMeta meta;
  meta.steps = 200;
  meta.seed = 3;
  const auto m = toy_reference_train(corpus, meta);
  CHECK(m.probability('a', 'b') > 0.9);
  for (std::size_t t = 1; t < m.loss_history.size(); ++t) CHECK(m.loss_history[t] <= m.loss_history[t - 1]);
  CHECK(m.loss_history.size() == 201);

  meta.steps = 0;
  const auto untouched = toy_reference_train(corpus, meta);
  const auto init = ToyReferenceModel::initialized(3);
  CHECK(std::equal(untouched.logits().begin(), untouched.logits().end(), init.logits().begin()));

  CHECK_THROWS_AS(toy_reference_train(std::vector<InstructionSample>{}, meta), Error);
}

TEST_CASE("toy gradient matches central finite differences") {
  std::mt19937_64 gen(31);
  const std::vector<InstructionSample> corpus{
      text_sample("p1", "Write a function that adds two numbers.", "def add(a, b):\n    return a + b"),
      text_sample("p2", "Reverse a list in place.", "def rev(xs):\n    xs.reverse()\n    return xs")};
  ToyTrainingMeta meta;
  meta.steps = 30;
  auto m = toy_reference_train(corpus, meta);
  const auto s = text_sample("q", "Sort values descending.", "def f(v):\n    return sorted(v)[::-1]");
  const std::string text = sample_text(s);
  const auto g = toy_reference_gradient(s, m);
  REQUIRE(g.values.size() == ToyReferenceModel::kDim);

  std::uniform_int_distribution<std::size_t> any(0, ToyReferenceModel::kDim - 1);
  std::uniform_int_distribution<std::size_t> pos(0, text.size() - 2), col(0, 255);
  const double h = 1e-4;
  for (int i = 0; i < 50; ++i) {
    // Half the coordinates sit on rows the text actually visits.
    const std::size_t idx =
        i % 2 ? any(gen) : static_cast<unsigned char>(text[pos(gen)]) * ToyReferenceModel::kVocab + col(gen);
    const double saved = m.logits()[idx];
    m.logits()[idx] = saved + h;
    const double up = text_loss(m, text);
    m.logits()[idx] = saved - h;
    const double down = text_loss(m, text);
    m.logits()[idx] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = g.values[idx];
    const double denom = std::max(std::abs(an), std::abs(fd));
    CHECK((denom == 0.0 || std::abs(an - fd) / denom <= 1e-4));
  }
}

TEST_CASE("toy gradient vanishes at the analytic optimum") {
  const std::vector<InstructionSample> corpus{text_sample("r", "abababab", "abab")};
  const auto m = ToyReferenceModel::closed_form(corpus);
  const auto g = toy_reference_gradient(corpus[0], m);
  double n = 0;
  for (double x : g.values) n += x * x;
  CHECK(std::sqrt(n) <= 1e-6);
  CHECK(toy_reference_gradient(corpus[0], m).values == g.values);
  CHECK_THROWS_AS(toy_reference_gradient(text_sample("t", "", ""), m), Error);
}

TEST_CASE("toy model save and load") {
  const auto dir = temp_dir("toy");
  ToyTrainingMeta meta;
  meta.steps = 3;
  meta.seed = 8;
  const auto m = toy_reference_train(std::vector{text_sample("a", "hello", "world")}, meta);
  save_toy_model(dir / "m.json", m);
  const auto back = load_toy_model(dir / "m.json");
  CHECK(std::equal(back.logits().begin(), back.logits().end(), m.logits().begin()));
  CHECK(back.meta.seed == 8);
  CHECK(back.loss_history == m.loss_history);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient file header layout") {
  GradientFileHeader h;
  h.dim = 0x0102030405060708ULL;
  h.count = 3;
  h.projected = true;
  h.k = 16;
  h.seed = 0xdeadbeefULL;
  const auto bytes = encode_header(h);
  REQUIRE(bytes.size() == kGradientHeaderBytes);
  CHECK(bytes.substr(0, 4) == "GRDV");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[9]) == 0x08);
  CHECK(static_cast<unsigned char>(bytes[16]) == 0x01);
  CHECK(static_cast<unsigned char>(bytes[25]) == 1);
  const auto back = decode_header(bytes);
  CHECK(back.dim == h.dim);
  CHECK(back.k == 16);
  CHECK(back.seed == h.seed);
  CHECK(back.row_length() == 16);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_header(bad), Error);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_header(bad), Error);
  bad = bytes;
  bad[8] = 1;
  CHECK_THROWS_AS(decode_header(bad), Error);
  CHECK_THROWS_AS(decode_header(bytes.substr(0, 20)), Error);
}

TEST_CASE("gradient files round-trip and append") {
  const auto dir = temp_dir("grdv");
  const auto path = dir / "g.grdv";
  GradientFileHeader h;
  h.dim = 5;
  std::vector<std::string> ids{"a", "b"};
  std::vector<std::vector<double>> rows{{0.5, -1.25, 3.0, 0.0, 2.0}, {1.0, 2.0, 4.0, 8.0, -16.0}};
  write_gradient_file(path, h, ids, rows, json{{"lora_r", 128}});
  {
    GradientFileReader r(path);
    CHECK(r.count() == 2);
    CHECK(r.header().dim == 5);
    CHECK(r.row(1) == rows[1]);
    CHECK(r.sample_ids() == ids);
    CHECK(r.metadata().value()["lora_r"] == 128);
    CHECK(r.find("b") == 1);
    CHECK_FALSE(r.find("zz").has_value());
    CHECK_THROWS_AS(r.row(2), Error);
  }
  {
    GradientFileWriter w(path, h);
    w.append("c", std::vector<double>{1, 1, 1, 1, 1});
    CHECK_THROWS_AS(w.append("d", std::vector<double>{1, 1}), Error);
  }
  GradientFileReader r(path);
  CHECK(r.count() == 3);
  CHECK(r.sample_ids().back() == "c");

  ImportedGradientProvider provider(path);
  InstructionSample s;
  s.sample_id = "b";
  const auto g = provider.gradient(s);
  CHECK(g.values == rows[1]);
  CHECK(g.provider_tag == ProviderTag::kImported);
  s.sample_id = "missing";
  CHECK_THROWS_AS(provider.gradient(s), Error);

  GradientFileHeader other = h;
  other.dim = 6;
  CHECK_THROWS_AS(GradientFileWriter(path, other), Error);

  // Truncated rows and a short index are both rejected.
  std::filesystem::resize_file(path, kGradientHeaderBytes + 5 * 4 * 2);
  CHECK_THROWS_AS(GradientFileReader{path}, Error);
  write_gradient_file(path, h, ids, rows);
  write_file_atomic(index_path(path), "{\"row\":0,\"sample_id\":\"a\"}\n");
  CHECK_THROWS_AS(GradientFileReader{path}, Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("readers see only complete rows while a writer appends") {
  const auto dir = temp_dir("concurrent");
  const auto path = dir / "g.grdv";
  GradientFileHeader h;
  h.dim = 64;
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  {
    GradientFileWriter w(path, h);
    std::thread reader([&] {
      while (!done) {
        try {
          GradientFileReader r(path);
          for (std::size_t i = 0; i < r.count(); ++i) {
            const auto row = r.row(i);
            if (row[0] != static_cast<double>(i) || row[63] != static_cast<double>(i)) ++bad;
          }
        } catch (const Error&) {
          ++bad;
        }
      }
    });
    for (int i = 0; i < 200; ++i) w.append("s" + std::to_string(i), std::vector<double>(64, i));
    done = true;
    reader.join();
  }
  CHECK(bad == 0);
  CHECK(GradientFileReader(path).count() == 200);
  std::filesystem::remove_all(dir);
}
