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

#include "selfdistill/bootstrap.hpp"
#include "selfdistill/gradient_io.hpp"
#include "selfdistill/toy_model.hpp"

namespace selfdistill::bootstrap {
namespace {

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string logits_digest(const influence::ToyReferenceModel& m) {
  const auto bytes = m.logits().size_bytes();
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(m.logits().data()), bytes));
}

}  // namespace

IterationPlan plan_iterations(double scale, const std::vector<std::size_t>& schedule, Seeds seeds) {
  if (!(scale > 0.0 && scale <= 1.0)) {
    throw Error(ErrorCode::kBadSchedule, "scale must lie in (0, 1], got " + std::to_string(scale));
  }
  IterationPlan plan;
  plan.scale = scale;
  plan.seeds = seeds;
  if (schedule.empty()) {
    int index = 1;
    for (std::size_t q : kDefaultQuotas) {
      // The small offset keeps exact products such as 20000 * 0.001 from
      // rounding up to the next integer.
      const auto quota = static_cast<std::size_t>(std::ceil(static_cast<double>(q) * scale - 1e-9));
      plan.iterations.push_back({index++, quota});
    }
  } else {
    int index = 1;
    for (std::size_t q : schedule) plan.iterations.push_back({index++, q});
  }
  for (const auto& it : plan.iterations) {
    if (it.quota == 0) {
      throw Error(ErrorCode::kBadSchedule, "iteration " + std::to_string(it.index) + " has a zero quota");
    }
  }
  return plan;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    Seeds seeds;
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      seeds.sample = s.value("sample", seeds.sample);
      seeds.projection = s.value("projection", seeds.projection);
      seeds.dedup = s.value("dedup", seeds.dedup);
    }
    c.plan = plan_iterations(j.value("scale", 1.0), j.value("schedule", std::vector<std::size_t>{}), seeds);
    if (j.contains("snippets_per_category")) c.snippets_per_category = j["snippets_per_category"].get<std::size_t>();
    c.oversample = j.value("oversample", c.oversample);
    const auto filter = j.value("filter", std::string("global"));
    if (filter == "global") {
      c.filter = FilterMode::kGlobal;
    } else if (filter == "per_category") {
      c.filter = FilterMode::kPerCategory;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown filter mode " + filter);
    }
    if (j.contains("pool")) {
      const auto& p = j["pool"];
      c.dedup.perms = p.value("perms", c.dedup.perms);
      c.dedup.bands = p.value("bands", c.dedup.bands);
      c.dedup.rows = p.value("rows", c.dedup.rows);
      c.dedup.jaccard_threshold = p.value("threshold", c.dedup.jaccard_threshold);
      c.dedup.shingle_size = p.value("shingle_size", c.dedup.shingle_size);
      c.dedup.lsh_rounds = p.value("lsh_rounds", c.dedup.lsh_rounds);
      c.decontam_ngram = p.value("decontam_ngram", c.decontam_ngram);
      if (p.contains("blocklist")) c.blocklist = p["blocklist"].get<std::set<std::string>>();
    }
    c.dedup.seed = c.plan.seeds.dedup;
    c.dedup.validate();
    if (j.contains("training")) {
      const auto& t = j["training"];
      c.training.base_model = t.value("base_model", c.training.base_model);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("plan config: ") + e.what());
  }
  if (!(c.oversample >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "oversample must be >= 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  auto c = run_config_from_json(parse_json_file(path));
  c.config_digest = sha256_file(path);
  return c;
}

Services load_services(const std::filesystem::path& path, const std::optional<std::filesystem::path>& mock_transcript) {
  const auto j = parse_json_file(path);
  const auto base = path.parent_path();
  Services s;
  s.config_digests["services"] = sha256_file(path);
  try {
    if (j.at("synthesis").is_string()) {
      const auto p = resolve(base, j["synthesis"].get<std::string>());
      s.synthesis = synth::load_synthesis_config(p);
      s.config_digests["synthesis"] = sha256_file(p);
    } else {
      s.synthesis = synth::synthesis_config_from_json(j["synthesis"], base);
    }
    s.config_digests["synthesis_template"] = sha256_hex(s.synthesis.templates.synthesis);
    s.config_digests["scoring_template"] = sha256_hex(s.synthesis.templates.scoring);

    if (mock_transcript) {
      s.backend = synth::MockBackend::from_file(*mock_transcript);
      s.config_digests["mock_transcript"] = sha256_file(*mock_transcript);
    } else {
      s.backend = std::make_shared<synth::HttpChatBackend>();
    }

    if (j.contains("weights")) {
      const auto p = resolve(base, j["weights"].get<std::string>());
      s.weights = scoring::weights_from_json(parse_json_file(p));
      s.config_digests["weights"] = sha256_file(p);
    }
    s.aggregation = scoring::aggregation_from_string(j.value("aggregation", std::string("weighted")));

    const auto corpus_path = resolve(base, j.at("corpus").get<std::string>());
    for (const auto& r : read_jsonl(corpus_path)) s.corpus.push_back(pool::snippet_from_json(r));
    s.corpus_digest = sha256_file(corpus_path);

    if (j.contains("benchmarks")) {
      const auto p = resolve(base, j["benchmarks"].get<std::string>());
      for (const auto& r : read_jsonl(p)) s.benchmark_corpus.push_back(r.at("text").get<std::string>());
      s.config_digests["benchmarks"] = sha256_file(p);
    }
    if (j.contains("categories")) {
      const auto p = resolve(base, j["categories"].get<std::string>());
      s.categories = sampler::category_set_from_json(read_jsonl(p));
      s.config_digests["categories"] = sha256_file(p);
    }
    if (j.contains("embeddings")) {
      const auto p = resolve(base, j["embeddings"].get<std::string>());
      for (const auto& r : read_jsonl(p)) {
        auto e = sampler::embedding_from_json(r);
        s.embeddings[e.snippet_id] = std::move(e.vector);
      }
      s.config_digests["embeddings"] = sha256_file(p);
    }

    const auto prop_path = resolve(base, j.at("proprietary").get<std::string>());
    for (const auto& r : read_jsonl(prop_path)) s.proprietary.push_back(sample_from_json(r));
    s.config_digests["proprietary"] = sha256_file(prop_path);

    const json ref = j.value("reference", json{{"kind", "toy"}});
    const auto kind = ref.value("kind", std::string("toy"));
    if (kind == "toy") {
      influence::ToyReferenceModel model;
      if (ref.contains("model")) {
        model = influence::load_toy_model(resolve(base, ref["model"].get<std::string>()));
      } else {
        influence::ToyTrainingMeta meta;
        meta.steps = ref.value("steps", meta.steps);
        meta.learning_rate = ref.value("learning_rate", meta.learning_rate);
        meta.seed = ref.value("seed", meta.seed);
        model = influence::toy_reference_train(s.proprietary, meta);
      }
      s.config_digests["reference_model"] = logits_digest(model);
      s.reference = std::make_shared<influence::ToyGradientProvider>(std::move(model));
      s.projection_k = ref.value("projection_k", std::size_t{1024});
    } else if (kind == "imported") {
      const auto p = resolve(base, ref.at("path").get<std::string>());
      s.reference = std::make_shared<influence::ImportedGradientProvider>(p);
      s.config_digests["reference_gradients"] = sha256_file(p);
      s.projection_k = std::min<std::size_t>(ref.value("projection_k", std::size_t{8192}), s.reference->dimension());
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown reference kind " + kind);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace selfdistill::bootstrap
