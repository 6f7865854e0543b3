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

#include <set>

#include "doctest.h"
#include "selfdistill/bootstrap.hpp"
#include "support/pipeline_fixture.hpp"

using namespace selfdistill;
using namespace selfdistill::bootstrap;
using namespace selfdistill::testing;

namespace {

std::size_t count(const json& manifest, const char* key) { return manifest.at("counts").at(key).get<std::size_t>(); }

std::string dataset_sha(const json& manifest) { return manifest.at("output_dataset").at("sha256").get<std::string>(); }

}  // namespace

TEST_CASE("plan_iterations") {
  auto p = plan_iterations(1.0);
  REQUIRE(p.iterations.size() == 2);
  CHECK(p.iterations[0].quota == 20000);
  CHECK(p.iterations[1].quota == 40000);
  CHECK(p.iterations[0].index == 1);
  p = plan_iterations(0.001);
  CHECK(p.iterations[0].quota == 20);
  CHECK(p.iterations[1].quota == 40);
  p = plan_iterations(0.00123);
  CHECK(p.iterations[0].quota == 25);
  CHECK(p.iterations[1].quota == 50);
  for (double scale : {1.0, 0.5, 0.01, 0.0003}) {
    const auto q = plan_iterations(scale);
    CHECK(q.iterations[1].quota > q.iterations[0].quota);
  }
  p = plan_iterations(1.0, {40000, 20000});
  CHECK(p.iterations[0].quota == 40000);
  CHECK(p.iterations[1].quota == 20000);
  CHECK(plan_iterations(1.0, {60000}).iterations.size() == 1);
  CHECK_THROWS_AS(plan_iterations(1.0, {20000, 0}), Error);
  CHECK_THROWS_AS(plan_iterations(0.0), Error);
  CHECK_THROWS_AS(plan_iterations(1.5), Error);
}

TEST_CASE("stage names round-trip") {
  for (int s = 0; s < kStageCount; ++s) CHECK(stage_from_string(to_string(static_cast<Stage>(s))) == static_cast<Stage>(s));
  CHECK_THROWS_AS(stage_from_string("train"), Error);
}

TEST_CASE("empty state directory resumes at iteration 1, stage pool") {
  const auto dir = fresh_dir("empty_state");
  const auto st = resume(dir / "state");
  CHECK(st.iteration == 1);
  CHECK(st.stage == Stage::kPool);
  CHECK(st.manifests.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("mock iteration: 10 snippets, M=2, N=2, quota 5") {
  const auto dir = fresh_dir("e2e_small");
  write_world(dir, {});
  auto w = load_world(dir);
  const auto r = run_iteration(dir / "state", w.config, w.services);
  REQUIRE(r.complete);
  const auto& m = r.manifest;
  CHECK(count(m, "snippets_drawn") == 10);
  CHECK(count(m, "candidate_slots") == 40);
  CHECK(count(m, "candidates_generated") == 40);
  CHECK(count(m, "best_selected") == 10);
  CHECK(count(m, "influence_filtered") == 5);
  CHECK(count(m, "emitted") == 5);
  CHECK(m["quota_shortfall"] == false);
  CHECK(m["complete"] == true);
  CHECK(m["stages_completed"].size() == 6);
  CHECK(r.state.iteration == 2);
  CHECK(w.mock->total_calls() == 80);

  // Emitted samples carry scores and influence, ranked by influence.
  const auto data = read_jsonl(dir / "state" / m["output_dataset"]["path"].get<std::string>());
  REQUIRE(data.size() == 5);
  for (std::size_t k = 1; k < data.size(); ++k) CHECK(data[k - 1]["influence"] >= data[k]["influence"]);
  for (const auto& d : data) {
    CHECK(d.contains("aspect_scores"));
    CHECK(d["provenance"]["kind"] == "self_distilled");
  }
  const auto job = json::parse(read_file(dir / "state" / "iter_001" / "training_job.json"));
  CHECK(job["epochs"] == 3);
  CHECK(job["learning_rate"] == 1e-5);
  CHECK(job["batch_size"] == 128);
  CHECK(job["samples"] == 5);
  CHECK(job["dataset_sha256"] == dataset_sha(m));

  const auto table = status_table(resume(dir / "state"));
  CHECK(table.find(dataset_sha(m).substr(0, 16)) != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("quota larger than the best candidates is a shortfall, not an error") {
  const auto dir = fresh_dir("shortfall");
  WorldSpec spec;
  spec.schedule = {20};
  spec.per_category = 1;
  write_world(dir, spec);
  auto w = load_world(dir);
  const auto r = run_iteration(dir / "state", w.config, w.services);
  CHECK(r.manifest["quota_shortfall"] == true);
  CHECK(count(r.manifest, "emitted") == 10);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical seeds and transcripts give identical datasets") {
  const auto dir = fresh_dir("determinism");
  write_world(dir, {});
  std::string first;
  for (int run = 0; run < 2; ++run) {
    auto w = load_world(dir);
    const auto state = dir / ("state" + std::to_string(run));
    const auto m = run_iteration(state, w.config, w.services).manifest;
    if (run == 0) {
      first = dataset_sha(m);
    } else {
      CHECK(dataset_sha(m) == first);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("interrupted after scoring, resume does not regenerate") {
  const auto dir = fresh_dir("resume");
  write_world(dir, {});
  std::string reference;
  {
    auto w = load_world(dir);
    reference = dataset_sha(run_iteration(dir / "reference", w.config, w.services).manifest);
  }
  auto w = load_world(dir);
  RunOptions stop;
  stop.stop_after = Stage::kScore;
  const auto partial = run_iteration(dir / "state", w.config, w.services, stop);
  CHECK_FALSE(partial.complete);
  CHECK(partial.state.stage == Stage::kInfluence);
  CHECK(w.mock->total_calls() == 80);

  const auto st = resume(dir / "state");
  CHECK(st.iteration == 1);
  CHECK(st.stage == Stage::kInfluence);
  CHECK(st.partial["stages_completed"].size() == 4);

  auto again = load_world(dir);
  const auto done = run_iteration(dir / "state", again.config, again.services);
  CHECK(done.complete);
  CHECK(again.mock->total_calls() == 0);
  CHECK(dataset_sha(done.manifest) == reference);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tampering is detected on resume") {
  const auto dir = fresh_dir("tamper");
  write_world(dir, {});
  auto w = load_world(dir);
  const auto m = run_iteration(dir / "state", w.config, w.services).manifest;
  const auto data_path = dir / "state" / m["output_dataset"]["path"].get<std::string>();
  const auto original = read_file(data_path);

  SUBCASE("artifact content") {
    write_file_atomic(data_path, original + "{\"extra\":1}\n");
    try {
      resume(dir / "state");
      FAIL("expected CorruptManifest");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kCorruptManifest);
    }
  }
  SUBCASE("manifest digest field") {
    const auto manifest_path = dir / "state" / "iter_001" / "manifest.json";
    auto doctored = json::parse(read_file(manifest_path));
    doctored["artifacts"]["dataset"]["sha256"] = std::string(64, '0');
    write_file_atomic(manifest_path, doctored.dump(2) + "\n");
    CHECK_THROWS_AS(resume(dir / "state"), Error);
    auto w2 = load_world(dir);
    CHECK_THROWS_AS(run_iteration(dir / "state", w2.config, w2.services), Error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a held lock blocks a second run") {
  const auto dir = fresh_dir("lock");
  StateLock held(dir / "state");
  try {
    resume(dir / "state");
    FAIL("expected StateLocked");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kStateLocked);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a failing stage reports its name and the partial manifest") {
  const auto dir = fresh_dir("stage_failure");
  WorldSpec spec;
  spec.with_scorer = false;
  write_world(dir, spec);
  auto w = load_world(dir);
  try {
    run_iteration(dir / "state", w.config, w.services);
    FAIL("expected StageFailure");
  } catch (const StageFailure& e) {
    CHECK(e.stage() == Stage::kScore);
    CHECK(e.code() == ErrorCode::kStageFailure);
    CHECK(e.partial_manifest()["stages_completed"].size() == 3);
    CHECK(e.partial_manifest()["counts"]["candidate_slots"] == 40);
  }
  const auto st = resume(dir / "state");
  CHECK(st.stage == Stage::kScore);
  CHECK(st.partial["last_error"]["stage"] == "score");
  std::filesystem::remove_all(dir);
}

TEST_CASE("slot failures are counted and never fatal") {
  const auto dir = fresh_dir("slot_failures");
  WorldSpec spec;
  spec.extra_rules = json::array({{{"kind", "synthesis"}, {"endpoint", "ckpt-2"}, {"j", 1}, {"fail", true}}});
  write_world(dir, spec);
  auto w = load_world(dir);
  const auto m = run_iteration(dir / "state", w.config, w.services).manifest;
  CHECK(count(m, "candidate_slots") == 40);
  CHECK(count(m, "candidates_failed") == 10);
  CHECK(count(m, "candidates_generated") == 30);
  CHECK(count(m, "best_selected") == 10);
  const auto slots = read_jsonl(dir / "state" / "iter_001" / "slots.jsonl");
  std::size_t failed = 0;
  for (const auto& s : slots) failed += s["ok"] == false;
  CHECK(failed == 10);
  std::filesystem::remove_all(dir);
}

TEST_CASE("two iterations draw disjoint snippets and never repeat a sample") {
  const auto dir = fresh_dir("two_iterations");
  WorldSpec spec;
  spec.snippets = 60;
  spec.schedule = {5, 8};
  write_world(dir, spec);
  auto w = load_world(dir);
  const auto manifests = run_plan(dir / "state", w.config, w.services);
  REQUIRE(manifests.size() == 2);
  std::set<std::string> snippets, samples;
  std::size_t drawn = 0, emitted = 0;
  for (const auto& m : manifests) {
    for (const auto& r : read_jsonl(dir / "state" / m["artifacts"]["sampled"]["path"].get<std::string>())) {
      snippets.insert(r["id"].get<std::string>());
    }
    for (const auto& r : read_jsonl(dir / "state" / m["output_dataset"]["path"].get<std::string>())) {
      samples.insert(r["sample_id"].get<std::string>());
    }
    drawn += count(m, "snippets_drawn");
    emitted += count(m, "emitted");
    CHECK(count(m, "emitted") == std::min<std::size_t>(m["quota"].get<std::size_t>(), count(m, "best_selected")));
  }
  CHECK(snippets.size() == drawn);
  CHECK(samples.size() == emitted);
  CHECK(emitted == 13);
  CHECK(resume(dir / "state").iteration == 3);
  CHECK_THROWS_AS(run_iteration(dir / "state", w.config, w.services), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("per-category influence filtering spreads the quota") {
  const auto dir = fresh_dir("per_category");
  WorldSpec spec;
  spec.snippets = 40;
  spec.schedule = {10};
  spec.per_category = 4;
  spec.filter = "per_category";
  write_world(dir, spec);
  auto w = load_world(dir);
  const auto m = run_iteration(dir / "state", w.config, w.services).manifest;
  CHECK(count(m, "emitted") == 10);
  std::set<int> cats;
  for (const auto& r : read_jsonl(dir / "state" / m["output_dataset"]["path"].get<std::string>())) {
    cats.insert(r["category"].get<int>());
  }
  CHECK(cats.size() == 10);
  std::filesystem::remove_all(dir);
}
