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

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "selfdistill/common.hpp"
#include "selfdistill/instruction_sample.hpp"
#include "selfdistill/snippet_pool.hpp"

namespace selfdistill::synth {

inline constexpr double kSynthesisTemperature = 0.2;
inline constexpr double kScorerTemperature = 0.0;

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_ms = 200;  // doubled after every failed attempt
};

struct EndpointConfig {
  std::string name;
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model_id;
  std::string api_key_env;  // empty: no Authorization header
  int max_parallel = 4;
  int timeout_ms = 120000;
  RetryPolicy retry;

  void validate() const;
};

// M checkpoints, N samples from each.
struct CheckpointSet {
  std::vector<EndpointConfig> checkpoints;
  int samples_per_checkpoint = 1;
  double temperature = kSynthesisTemperature;

  void validate() const;
  std::size_t slots_per_snippet() const { return checkpoints.size() * static_cast<std::size_t>(samples_per_checkpoint); }
};

struct ChatMessage {
  std::string role;
  std::string content;
};

// Routing information that never goes on the wire; the mock backend keys
// its transcript on it.
struct RequestTag {
  std::string kind;  // "synthesis", "score" or "classify"
  std::string snippet_id;
  int i = 0;
  int j = 0;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int n = 1;
  RequestTag tag;

  json to_wire() const;
};

// One completion per call. Throws Error(EndpointUnavailable) on any transport
// or protocol failure; the caller decides about retries.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const EndpointConfig& endpoint, const ChatRequest& request) = 0;
};

// OpenAI-style POST {base_url}/chat/completions.
class HttpChatBackend final : public ChatBackend {
 public:
  std::string complete(const EndpointConfig& endpoint, const ChatRequest& request) override;
};

// Scripted replies for offline runs and tests.
//
// Transcript JSON:
//   {"rules": [{"kind": "synthesis", "endpoint": "ckpt-2", "snippet": "<id prefix>",
//               "i": 1, "j": 3, "reply": "...", "fail": true, "fail_times": 2}, ...],
//    "latency_ms": 0}
// Every key except "reply"/"fail"/"fail_times" is an optional filter; the first
// matching rule wins. "fail" fails every attempt, "fail_times" only the first
// n attempts of a slot. Replies expand {snippet_id}, {i}, {j}, {endpoint} and
// {digit:K}, a digit in [0, 9] hashed from the slot and K.
class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(json transcript);
  static std::unique_ptr<MockBackend> from_file(const std::filesystem::path& path);

  std::string complete(const EndpointConfig& endpoint, const ChatRequest& request) override;

  std::size_t total_calls() const { return total_calls_.load(); }
  // Highest number of simultaneous calls observed per endpoint.
  std::map<std::string, int> max_in_flight() const;

 private:
  json rules_;
  int latency_ms_ = 0;
  std::atomic<std::size_t> total_calls_{0};
  mutable std::mutex mu_;
  std::map<std::string, int> attempts_;
  std::map<std::string, int> in_flight_;
  std::map<std::string, int> max_in_flight_;
};

std::string expand_mock_reply(const std::string& tmpl, const std::string& endpoint, const RequestTag& tag);

// Prompt templates. The synthesis template needs "{snippet}"; the scoring
// template needs "{problem}" and "{solution}".
struct PromptTemplates {
  std::string synthesis;
  std::string scoring;
  std::string classify;  // optional, needs "{snippet}"
};

std::string render_synthesis_prompt(const pool::CodeSnippet& snippet, const std::string& tmpl);
std::string render_scoring_prompt(const InstructionSample& sample, const std::string& tmpl);

inline constexpr std::string_view kProblemMarker = "[problem]";
inline constexpr std::string_view kSolutionMarker = "[solution]";

// Splits at the first problem marker and the last solution marker after it.
std::pair<std::string, std::string> parse_problem_solution(std::string_view raw);
std::string format_problem_solution(const std::string& problem, const std::string& solution);

// One request and its retry outcome.
struct RequestOutcome {
  std::optional<std::string> reply;
  std::string error;
  int attempts = 0;
};

struct Job {
  const EndpointConfig* endpoint = nullptr;
  ChatRequest request;
};

// Runs all jobs concurrently, at most `global_parallel` at once and at most
// max_parallel per endpoint. Outcomes come back in job order.
std::vector<RequestOutcome> run_requests(std::span<const Job> jobs, ChatBackend& backend, int global_parallel);

// Candidate slot (i, j) for one snippet, 1-based.
struct CandidateSlot {
  int i = 0;
  int j = 0;
  std::string endpoint;
  std::optional<InstructionSample> sample;  // set when the reply parsed
  std::string raw;
  std::string error;  // EndpointUnavailable or MalformedCompletion text
  int attempts = 0;

  bool ok() const { return sample.has_value(); }
};

struct CandidateBatch {
  std::string snippet_id;
  std::vector<CandidateSlot> slots;  // exactly M*N, ordered by (i, j)

  std::size_t successes() const;
};

struct GenerationOptions {
  int global_parallel = 8;
  int iteration = 1;
  std::string synthesis_template = "{snippet}";
};

// Never throws for per-slot failures.
std::vector<CandidateBatch> collect_candidates(std::span<const pool::CodeSnippet> snippets, const CheckpointSet& cs,
                                               ChatBackend& backend, const GenerationOptions& opts);

// Single snippet; throws AllSlotsFailed when no slot produced a sample.
CandidateBatch generate_candidates(const pool::CodeSnippet& snippet, const CheckpointSet& cs, ChatBackend& backend,
                                   const GenerationOptions& opts);

json slot_to_json(const std::string& snippet_id, const CandidateSlot& slot);

// One scoring request per sample, tagged "score"; outcomes in sample order.
std::vector<RequestOutcome> request_scores(std::span<const InstructionSample> samples, const EndpointConfig& scorer,
                                           const std::string& tmpl, double temperature, ChatBackend& backend,
                                           int global_parallel);

// Pool quality hook that asks an endpoint; a reply starting with "yes" keeps
// the snippet. Endpoint failures keep it.
pool::QualityClassifier make_endpoint_classifier(const EndpointConfig& endpoint, std::string tmpl,
                                                 std::shared_ptr<ChatBackend> backend);

// Endpoint/template configuration file (JSON). Template paths are relative to
// the configuration file.
struct SynthesisConfig {
  CheckpointSet checkpoints;
  std::optional<EndpointConfig> scorer;
  double scorer_temperature = kScorerTemperature;
  std::optional<EndpointConfig> classifier;
  PromptTemplates templates;
  int global_parallel = 8;
};

EndpointConfig endpoint_from_json(const json& j);
SynthesisConfig synthesis_config_from_json(const json& j, const std::filesystem::path& base_dir);
SynthesisConfig load_synthesis_config(const std::filesystem::path& path);

}  // namespace selfdistill::synth
