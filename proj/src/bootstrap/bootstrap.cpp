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

#include "selfdistill/bootstrap.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "state.hpp"

namespace selfdistill::bootstrap {
namespace {

struct Context {
  const std::filesystem::path& state_dir;
  const RunConfig& config;
  Services& services;
  const PipelineState& state;
  const RunOptions& opts;
  int iteration;
  std::size_t quota;
  json& manifest;

  void log(const std::string& msg) const {
    if (opts.log) opts.log("iteration " + std::to_string(iteration) + ": " + msg);
  }
  void count(const std::string& key, std::size_t n) const { manifest["counts"][key] = n; }
  void warn(const std::string& msg) const {
    manifest["warnings"].push_back(msg);
    log("warning: " + msg);
  }
};

void put_artifact(Context& c, const std::string& key, const std::vector<json>& records) {
  const auto dir = iteration_dir(c.state_dir, c.iteration);
  std::filesystem::create_directories(dir);
  const auto path = dir / (key + ".jsonl");
  write_jsonl(path, records);
  c.manifest["artifacts"][key] = {{"path", std::filesystem::relative(path, c.state_dir).generic_string()},
                                  {"sha256", sha256_file(path)},
                                  {"records", records.size()}};
}

std::vector<json> get_artifact(const std::filesystem::path& state_dir, const json& manifest, const std::string& key) {
  const auto& art = manifest.at("artifacts").at(key);
  return read_jsonl(state_dir / art.at("path").get<std::string>());
}

std::vector<pool::CodeSnippet> snippets_of(const std::vector<json>& records) {
  std::vector<pool::CodeSnippet> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(pool::snippet_from_json(r));
  return out;
}

std::vector<InstructionSample> samples_of(const std::vector<json>& records) {
  std::vector<InstructionSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(sample_from_json(r));
  return out;
}

void stage_pool(Context& c) {
  pool::PoolOptions o;
  o.dedup = c.config.dedup;
  o.blocklist = c.config.blocklist;
  o.decontam_ngram = c.config.decontam_ngram;
  o.benchmark_corpus = c.services.benchmark_corpus;
  const auto& syn = c.services.synthesis;
  if (syn.classifier && !syn.templates.classify.empty()) {
    o.classifier = synth::make_endpoint_classifier(*syn.classifier, syn.templates.classify, c.services.backend);
  }
  const auto result = pool::build_pool(c.services.corpus, o);
  std::vector<json> kept, removed;
  for (const auto& s : result.pool) kept.push_back(pool::snippet_to_json(s));
  std::map<std::string, std::size_t> by_stage;
  for (const auto& r : result.removals) {
    removed.push_back(pool::removal_to_json(r));
    ++by_stage[r.stage];
  }
  put_artifact(c, "pool", kept);
  put_artifact(c, "removals", removed);
  c.manifest["input_pool_digest"] = c.services.corpus_digest;
  c.count("pool_input", c.services.corpus.size());
  c.count("pool_kept", kept.size());
  for (const auto& [stage, n] : by_stage) c.count("removed_" + stage, n);
  c.log("pool kept " + std::to_string(kept.size()) + " of " + std::to_string(c.services.corpus.size()));
}

void stage_sample(Context& c) {
  const auto snippets = snippets_of(get_artifact(c.state_dir, c.manifest, "pool"));
  std::set<std::string> drawn_before;
  for (const auto& m : c.state.manifests) {
    for (const auto& r : get_artifact(c.state_dir, m, "sampled")) drawn_before.insert(r.at("id").get<std::string>());
  }
  std::vector<sampler::CategorizedSnippet> candidates;
  std::map<std::string, const pool::CodeSnippet*> by_id;
  for (const auto& s : snippets) {
    if (drawn_before.count(s.id)) continue;
    int z;
    if (s.category) {
      z = *s.category;
    } else if (auto e = c.services.embeddings.find(s.id); e != c.services.embeddings.end() && c.services.categories) {
      z = sampler::assign_category({s.id, e->second}, *c.services.categories);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "snippet " + s.id + " has neither a category nor an embedding");
    }
    candidates.push_back({s.id, z});
    by_id[s.id] = &s;
  }
  const std::size_t per_category =
      c.config.snippets_per_category.value_or(static_cast<std::size_t>(
          std::ceil(c.config.oversample * static_cast<double>(c.quota) / sampler::kNumCategories - 1e-9)));
  const std::uint64_t seed = hash_combine(c.config.plan.seeds.sample, static_cast<std::uint64_t>(c.iteration));
  const auto sel = sampler::stratified_sample(candidates, per_category, seed);
  std::vector<json> out;
  for (int z = 0; z < sampler::kNumCategories; ++z) {
    for (const auto& id : sel.by_category[z]) {
      auto snip = *by_id.at(id);
      snip.category = z;
      out.push_back(pool::snippet_to_json(snip));
    }
  }
  for (const auto& u : sel.underflows) {
    c.warn("category " + std::to_string(u.category) + " has " + std::to_string(u.available) + " snippets, wanted " +
           std::to_string(u.requested));
  }
  put_artifact(c, "sampled", out);
  c.manifest["seeds"]["sample_iteration"] = seed;
  c.count("snippets_available", candidates.size());
  c.count("snippets_per_category", per_category);
  c.count("snippets_drawn", out.size());
}

void stage_synthesize(Context& c) {
  const auto snippets = snippets_of(get_artifact(c.state_dir, c.manifest, "sampled"));
  synth::GenerationOptions g;
  g.global_parallel = c.services.synthesis.global_parallel;
  g.iteration = c.iteration;
  g.synthesis_template = c.services.synthesis.templates.synthesis;
  const auto batches = synth::collect_candidates(snippets, c.services.synthesis.checkpoints, *c.services.backend, g);
  std::vector<json> slots, candidates;
  std::size_t failed = 0, dead_snippets = 0;
  for (const auto& b : batches) {
    for (const auto& s : b.slots) {
      slots.push_back(synth::slot_to_json(b.snippet_id, s));
      if (s.ok()) {
        candidates.push_back(sample_to_json(*s.sample));
      } else {
        ++failed;
      }
    }
    if (b.successes() == 0) ++dead_snippets;
  }
  if (dead_snippets) c.warn(std::to_string(dead_snippets) + " snippets produced no usable candidate");
  put_artifact(c, "slots", slots);
  put_artifact(c, "candidates", candidates);
  c.count("candidate_slots", slots.size());
  c.count("candidates_generated", candidates.size());
  c.count("candidates_failed", failed);
  c.count("snippets_all_failed", dead_snippets);
}

void stage_score(Context& c) {
  const auto& syn = c.services.synthesis;
  if (!syn.scorer) throw Error(ErrorCode::kInvalidArgument, "no scorer endpoint configured");
  auto candidates = samples_of(get_artifact(c.state_dir, c.manifest, "candidates"));
  const auto outcomes = synth::request_scores(candidates, *syn.scorer, syn.templates.scoring, syn.scorer_temperature,
                                             *c.services.backend, syn.global_parallel);
  const auto& w = c.services.weights;
  std::vector<json> scored, failures;
  std::map<std::string, std::vector<InstructionSample>> by_snippet;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    auto& s = candidates[k];
    std::string error = outcomes[k].error;
    if (outcomes[k].reply) {
      try {
        s.aspect_scores = scoring::parse_aspect_scores(*outcomes[k].reply, w.w.size());
        s.aggregate_score = scoring::aggregate(*s.aspect_scores, w, c.services.aggregation);
      } catch (const Error& e) {
        error = e.what();
      }
    }
    if (s.aspect_scores) {
      scored.push_back(sample_to_json(s));
      by_snippet[s.snippet_id].push_back(s);
    } else {
      failures.push_back({{"sample_id", s.sample_id}, {"error", error}, {"attempts", outcomes[k].attempts}});
    }
  }
  std::vector<json> best;
  std::size_t no_valid = 0;
  for (const auto& r : get_artifact(c.state_dir, c.manifest, "sampled")) {
    const auto it = by_snippet.find(r.at("id").get<std::string>());
    if (it == by_snippet.end()) {
      ++no_valid;
      continue;
    }
    best.push_back(sample_to_json(scoring::select_best_candidate(it->second, w, c.services.aggregation)));
  }
  put_artifact(c, "scored", scored);
  put_artifact(c, "score_failures", failures);
  put_artifact(c, "best", best);
  c.manifest["aggregation"] = scoring::to_string(c.services.aggregation);
  c.manifest["weights"] = w.w;
  if (w.w.size() == scoring::kDefaultAspects) c.manifest["aspect_names"] = scoring::default_aspect_names();
  c.count("scored", scored.size());
  c.count("score_failures", failures.size());
  c.count("best_selected", best.size());
  c.count("snippets_without_valid_candidate", no_valid);
}

std::vector<std::string> per_category_top(const std::vector<influence::InfluenceRecord>& records,
                                          const std::vector<int>& categories, std::size_t quota) {
  const std::size_t nz = sampler::kNumCategories;
  std::vector<std::vector<influence::InfluenceRecord>> groups(nz);
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (categories[k] >= 0 && categories[k] < static_cast<int>(nz)) groups[categories[k]].push_back(records[k]);
  }
  std::set<std::string> chosen;
  for (std::size_t z = 0; z < nz; ++z) {
    const std::size_t qz = quota / nz + (z < quota % nz ? 1 : 0);
    if (qz == 0) continue;
    for (auto& id : influence::select_top_influential(groups[z], qz).sample_ids) chosen.insert(id);
  }
  // Categories that ran short hand their slots to the best remaining records.
  std::vector<influence::InfluenceRecord> rest;
  for (const auto& r : records) {
    if (!chosen.count(r.sample_id)) rest.push_back(r);
  }
  if (chosen.size() < quota) {
    for (auto& id : influence::select_top_influential(rest, quota - chosen.size()).sample_ids) chosen.insert(id);
  }
  std::vector<influence::InfluenceRecord> picked;
  for (const auto& r : records) {
    if (chosen.count(r.sample_id)) picked.push_back(r);
  }
  return influence::select_top_influential(picked, picked.size()).sample_ids;
}

void stage_influence(Context& c) {
  const auto& ref = *c.services.reference;
  const auto proj = influence::build_projection(ref.dimension(), std::min(c.services.projection_k, ref.dimension()),
                                                c.config.plan.seeds.projection);
  std::vector<influence::ProjectedGradient> anchors;
  for (const auto& p : c.services.proprietary) {
    try {
      anchors.push_back(influence::project_gradient(ref.gradient(p), proj));
    } catch (const Error& e) {
      c.warn("proprietary sample " + p.sample_id + " skipped: " + e.what());
    }
  }
  const auto anchor = influence::anchor_gradient(anchors);

  const auto best = samples_of(get_artifact(c.state_dir, c.manifest, "best"));
  std::vector<influence::InfluenceRecord> records;
  std::vector<int> categories;
  std::vector<json> out;
  std::size_t failures = 0;
  for (const auto& s : best) {
    try {
      const auto rec = influence::influence_score(influence::project_gradient(ref.gradient(s), proj), anchor);
      records.push_back(rec);
      categories.push_back(s.category.value_or(-1));
      out.push_back({{"sample_id", s.sample_id}, {"influence", rec.influence}});
    } catch (const Error& e) {
      ++failures;
      out.push_back({{"sample_id", s.sample_id}, {"error", e.what()}});
    }
  }
  const auto selected = c.config.filter == FilterMode::kGlobal
                            ? influence::select_top_influential(records, c.quota).sample_ids
                            : per_category_top(records, categories, c.quota);
  std::vector<json> sel;
  for (std::size_t r = 0; r < selected.size(); ++r) sel.push_back({{"rank", r + 1}, {"sample_id", selected[r]}});
  put_artifact(c, "influence", out);
  put_artifact(c, "selected", sel);
  double anchor_norm = 0;
  for (double x : anchor) anchor_norm += x * x;
  c.manifest["reference"] = {{"dimension", ref.dimension()},
                             {"projection_k", proj.output_dim},
                             {"projection_seed", proj.seed},
                             {"anchor_samples", anchors.size()},
                             {"anchor_norm", std::sqrt(anchor_norm)},
                             {"filter", c.config.filter == FilterMode::kGlobal ? "global" : "per_category"}};
  c.count("influence_scored", records.size());
  c.count("influence_failures", failures);
  c.count("influence_filtered", selected.size());
  c.manifest["quota_shortfall"] = selected.size() < c.quota;
  if (selected.size() < c.quota) {
    c.warn("quota shortfall: " + std::to_string(selected.size()) + " of " + std::to_string(c.quota));
  }
}

void stage_emit(Context& c) {
  std::map<std::string, InstructionSample> best;
  for (auto& s : samples_of(get_artifact(c.state_dir, c.manifest, "best"))) best.emplace(s.sample_id, std::move(s));
  std::map<std::string, double> influence;
  for (const auto& r : get_artifact(c.state_dir, c.manifest, "influence")) {
    if (r.contains("influence")) influence[r["sample_id"]] = r["influence"].get<double>();
  }
  std::vector<json> dataset;
  for (const auto& r : get_artifact(c.state_dir, c.manifest, "selected")) {
    auto s = best.at(r.at("sample_id").get<std::string>());
    s.influence = influence.at(s.sample_id);
    dataset.push_back(sample_to_json(s));
  }
  put_artifact(c, "dataset", dataset);
  const auto& art = c.manifest["artifacts"]["dataset"];
  c.manifest["output_dataset"] = {{"path", art["path"]}, {"sha256", art["sha256"]}};

  const auto& t = c.config.training;
  const json job{{"iteration", c.iteration},
                 {"dataset", art["path"]},
                 {"dataset_sha256", art["sha256"]},
                 {"samples", dataset.size()},
                 {"base_model", t.base_model},
                 {"epochs", t.epochs},
                 {"learning_rate", t.learning_rate},
                 {"batch_size", t.batch_size}};
  const auto job_path = iteration_dir(c.state_dir, c.iteration) / "training_job.json";
  write_file_atomic(job_path, job.dump(2) + "\n");
  c.manifest["artifacts"]["training_job"] = {
      {"path", std::filesystem::relative(job_path, c.state_dir).generic_string()}, {"sha256", sha256_file(job_path)}};
  c.count("emitted", dataset.size());
}

void run_stage(Stage s, Context& c) {
  switch (s) {
    case Stage::kPool: return stage_pool(c);
    case Stage::kSample: return stage_sample(c);
    case Stage::kSynthesize: return stage_synthesize(c);
    case Stage::kScore: return stage_score(c);
    case Stage::kInfluence: return stage_influence(c);
    case Stage::kEmit: return stage_emit(c);
  }
}

json fresh_manifest(const RunConfig& config, const Services& services, int iteration, std::size_t quota) {
  json digests(services.config_digests);
  if (!config.config_digest.empty()) digests["plan"] = config.config_digest;
  const auto& seeds = config.plan.seeds;
  return {{"iteration", iteration},
          {"quota", quota},
          {"complete", false},
          {"stages_completed", json::array()},
          {"seeds", {{"sample", seeds.sample}, {"projection", seeds.projection}, {"dedup", seeds.dedup}}},
          {"config_digests", digests},
          {"counts", json::object()},
          {"artifacts", json::object()},
          {"timings_ms", json::object()},
          {"warnings", json::array()},
          {"quota_shortfall", false}};
}

}  // namespace

IterationResult run_iteration(const std::filesystem::path& state_dir, const RunConfig& config, Services& services,
                              const RunOptions& opts) {
  StateLock lock(state_dir);
  PipelineState st = detail::load_state(state_dir);
  const auto& its = config.plan.iterations;
  if (st.iteration > static_cast<int>(its.size())) {
    throw Error(ErrorCode::kInvalidArgument, "plan has no iteration " + std::to_string(st.iteration));
  }
  const std::size_t quota = its[st.iteration - 1].quota;
  if (st.partial.empty()) {
    st.partial = fresh_manifest(config, services, st.iteration, quota);
  } else if (st.partial.value("quota", std::size_t{0}) != quota) {
    throw Error(ErrorCode::kInvalidArgument, "plan quota changed while iteration " + std::to_string(st.iteration) +
                                                 " was in progress");
  }

  for (int si = static_cast<int>(st.stage); si < kStageCount; ++si) {
    const auto stage = static_cast<Stage>(si);
    Context ctx{state_dir, config, services, st, opts, st.iteration, quota, st.partial};
    const json artifacts_before = st.partial["artifacts"];
    const auto t0 = std::chrono::steady_clock::now();
    ctx.log("stage " + std::string(to_string(stage)));
    try {
      run_stage(stage, ctx);
    } catch (const std::exception& e) {
      st.partial["artifacts"] = artifacts_before;
      st.partial["last_error"] = {{"stage", to_string(stage)}, {"message", e.what()}};
      detail::save_state(state_dir, st);
      throw StageFailure(stage, e.what(), st.partial);
    }
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    st.partial["timings_ms"][std::string(to_string(stage))] = ms;
    st.partial["stages_completed"].push_back(to_string(stage));
    st.partial.erase("last_error");

    if (stage == Stage::kEmit) {
      st.partial["complete"] = true;
      const auto rel = detail::manifest_rel(st.iteration);
      write_file_atomic(state_dir / rel, st.partial.dump(2) + "\n");
      IterationResult result;
      result.manifest = st.partial;
      st.manifests.push_back(st.partial);
      st.manifest_digests.push_back(sha256_file(state_dir / rel));
      st.partial = json::object();
      st.iteration += 1;
      st.stage = Stage::kPool;
      detail::save_state(state_dir, st);
      result.state = st;
      result.complete = true;
      return result;
    }
    st.stage = static_cast<Stage>(si + 1);
    detail::save_state(state_dir, st);
    if (opts.stop_after && *opts.stop_after == stage) return {st, st.partial, false};
  }
  return {st, st.partial, false};
}

std::vector<json> run_plan(const std::filesystem::path& state_dir, const RunConfig& config, Services& services,
                           const RunOptions& opts) {
  std::vector<json> done;
  while (true) {
    {
      const auto st = resume(state_dir);
      if (st.iteration > static_cast<int>(config.plan.iterations.size())) break;
    }
    auto r = run_iteration(state_dir, config, services, opts);
    if (!r.complete) break;
    done.push_back(std::move(r.manifest));
  }
  return done;
}

}  // namespace selfdistill::bootstrap
