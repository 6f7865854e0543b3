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
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "selfdistill/aspect_scoring.hpp"
#include "selfdistill/common.hpp"
#include "selfdistill/diversity_sampler.hpp"
#include "selfdistill/influence.hpp"
#include "selfdistill/instruction_sample.hpp"
#include "selfdistill/snippet_pool.hpp"
#include "selfdistill/synthesis_client.hpp"

namespace selfdistill::bootstrap {

inline constexpr std::size_t kDefaultQuotas[] = {20000, 40000};

struct Seeds {
  std::uint64_t sample = 1;
  std::uint64_t projection = 2;
  std::uint64_t dedup = 3;
};

struct IterationSpec {
  int index = 1;
  std::size_t quota = 0;
};

struct IterationPlan {
  std::vector<IterationSpec> iterations;
  double scale = 1.0;
  Seeds seeds;
};

// Custom schedules are used verbatim; otherwise the default two-iteration
// schedule is scaled with a ceiling. Throws BadSchedule on a zero quota or a
// scale outside (0, 1].
IterationPlan plan_iterations(double scale, const std::vector<std::size_t>& schedule = {}, Seeds seeds = {});

enum class FilterMode { kGlobal, kPerCategory };

struct TrainingDefaults {
  std::string base_model = "enhanced-synthesizer";
  int epochs = 3;
  double learning_rate = 1e-5;
  int batch_size = 128;
};

// Everything in the plan file besides the schedule itself.
struct RunConfig {
  IterationPlan plan;
  std::optional<std::size_t> snippets_per_category;  // default ceil(oversample * quota / 10)
  double oversample = 2.0;
  FilterMode filter = FilterMode::kGlobal;
  pool::DedupConfig dedup;
  std::size_t decontam_ngram = 10;
  std::set<std::string> blocklist = {"os", "sys"};
  TrainingDefaults training;
  std::string config_digest;  // sha256 of the plan file when loaded from disk
};

RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Endpoint and data handles for one run.
struct Services {
  std::shared_ptr<synth::ChatBackend> backend;
  synth::SynthesisConfig synthesis;
  scoring::WeightVector weights = scoring::WeightVector::uniform(scoring::kDefaultAspects);
  scoring::Aggregation aggregation = scoring::Aggregation::kWeighted;
  std::shared_ptr<const influence::GradientProvider> reference;
  std::size_t projection_k = 1024;
  std::vector<InstructionSample> proprietary;
  std::vector<pool::CodeSnippet> corpus;
  std::vector<std::string> benchmark_corpus;
  std::optional<sampler::CategorySet> categories;
  std::map<std::string, std::vector<double>> embeddings;  // by snippet id
  std::map<std::string, std::string> config_digests;
  std::string corpus_digest;
};

// Services file paths are relative to the file. A mock transcript replaces the
// HTTP backend.
Services load_services(const std::filesystem::path& path, const std::optional<std::filesystem::path>& mock_transcript);

enum class Stage { kPool, kSample, kSynthesize, kScore, kInfluence, kEmit };
inline constexpr int kStageCount = 6;

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view name);

struct PipelineState {
  int iteration = 1;
  Stage stage = Stage::kPool;       // next stage to run
  std::vector<json> manifests;      // completed iterations, in order
  std::vector<std::string> manifest_digests;  // sha256 of each completed manifest file
  json partial = json::object();    // manifest of the iteration in progress
};

// Raised when a stage throws. Carries the manifest as far as it got.
class StageFailure : public Error {
 public:
  StageFailure(Stage stage, const std::string& message, json partial)
      : Error(ErrorCode::kStageFailure, std::string(to_string(stage)) + ": " + message),
        stage_(stage),
        partial_(std::move(partial)) {}
  Stage stage() const { return stage_; }
  const json& partial_manifest() const { return partial_; }

 private:
  Stage stage_;
  json partial_;
};

// Exclusive advisory lock on <state_dir>/.lock; throws StateLocked if held.
class StateLock {
 public:
  explicit StateLock(const std::filesystem::path& state_dir);
  ~StateLock();
  StateLock(const StateLock&) = delete;
  StateLock& operator=(const StateLock&) = delete;

 private:
  int fd_ = -1;
};

// Rebuilds state from <state_dir>, verifying every recorded digest. Throws
// CorruptManifest on a mismatch, StateLocked if another run holds the lock.
PipelineState resume(const std::filesystem::path& state_dir);

struct RunOptions {
  std::optional<Stage> stop_after;  // simulate an interruption
  std::function<void(const std::string&)> log;
};

struct IterationResult {
  PipelineState state;
  json manifest;
  bool complete = false;
};

// Runs the current iteration from its stage cursor.
IterationResult run_iteration(const std::filesystem::path& state_dir, const RunConfig& config, Services& services,
                              const RunOptions& opts = {});

// Runs iterations until the plan is exhausted.
std::vector<json> run_plan(const std::filesystem::path& state_dir, const RunConfig& config, Services& services,
                           const RunOptions& opts = {});

std::filesystem::path iteration_dir(const std::filesystem::path& state_dir, int iteration);

// Human-readable manifest table.
std::string status_table(const PipelineState& state);

}  // namespace selfdistill::bootstrap
