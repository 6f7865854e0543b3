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

#include "selfdistill/synthesis_client.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <thread>

namespace selfdistill::synth {
namespace {

class Semaphore {
 public:
  explicit Semaphore(int n) : n_(n) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return n_ > 0; });
    --n_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++n_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int n_;
};

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

// Single left-to-right pass, so replacement text is never re-expanded.
std::string substitute(const std::string& tmpl, const std::vector<std::pair<std::string, std::string>>& vars) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    bool matched = false;
    if (tmpl[pos] == '{') {
      for (const auto& [key, value] : vars) {
        if (tmpl.compare(pos, key.size(), key) == 0) {
          out += value;
          pos += key.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out.push_back(tmpl[pos++]);
  }
  return out;
}

void require_placeholder(const std::string& tmpl, const std::string& key, const char* what) {
  if (tmpl.find(key) == std::string::npos) {
    throw Error(ErrorCode::kMissingPlaceholder, std::string(what) + " template lacks " + key);
  }
}

std::string slot_key(const std::string& endpoint, const RequestTag& tag) {
  return endpoint + "|" + tag.kind + "|" + tag.snippet_id + "|" + std::to_string(tag.i) + "|" + std::to_string(tag.j);
}

bool rule_matches(const json& rule, const std::string& endpoint, const RequestTag& tag) {
  if (rule.contains("kind") && rule["kind"].get<std::string>() != tag.kind) return false;
  if (rule.contains("endpoint") && rule["endpoint"].get<std::string>() != endpoint) return false;
  if (rule.contains("snippet") && !tag.snippet_id.starts_with(rule["snippet"].get<std::string>())) return false;
  if (rule.contains("i") && rule["i"].get<int>() != tag.i) return false;
  if (rule.contains("j") && rule["j"].get<int>() != tag.j) return false;
  return true;
}

}  // namespace

void EndpointConfig::validate() const {
  if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "endpoint needs a name");
  if (max_parallel < 1) throw Error(ErrorCode::kInvalidArgument, "endpoint " + name + ": max_parallel must be >= 1");
  if (retry.max_attempts < 1) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint " + name + ": retry.max_attempts must be >= 1");
  }
  if (retry.backoff_ms < 0 || timeout_ms < 0) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint " + name + ": negative timing");
  }
}

void CheckpointSet::validate() const {
  if (checkpoints.empty()) throw Error(ErrorCode::kInvalidArgument, "checkpoint set needs at least one checkpoint");
  if (samples_per_checkpoint < 1) throw Error(ErrorCode::kInvalidArgument, "samples per checkpoint must be >= 1");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  for (const auto& c : checkpoints) c.validate();
}

json ChatRequest::to_wire() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", model}, {"messages", msgs}, {"temperature", temperature}, {"n", n}};
}

std::string expand_mock_reply(const std::string& tmpl, const std::string& endpoint, const RequestTag& tag) {
  const std::uint64_t base =
      hash_combine(hash_combine(fnv1a64(endpoint + "|" + tag.kind + "|" + tag.snippet_id), tag.i), tag.j);
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    if (tmpl.compare(pos, 7, "{digit:") == 0) {
      const auto close = tmpl.find('}', pos);
      if (close != std::string::npos) {
        const auto k = std::stoull(tmpl.substr(pos + 7, close - pos - 7));
        out += static_cast<char>('0' + mix64(hash_combine(base, k)) % 10);
        pos = close + 1;
        continue;
      }
    }
    out.push_back(tmpl[pos++]);
  }
  return substitute(out, {{"{snippet_id}", tag.snippet_id},
                          {"{i}", std::to_string(tag.i)},
                          {"{j}", std::to_string(tag.j)},
                          {"{endpoint}", endpoint}});
}

MockBackend::MockBackend(json transcript) {
  rules_ = transcript.value("rules", json::array());
  latency_ms_ = transcript.value("latency_ms", 0);
  if (!rules_.is_array()) throw Error(ErrorCode::kFormatError, "mock transcript: rules must be an array");
}

std::unique_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path) {
  try {
    return std::make_unique<MockBackend>(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

std::map<std::string, int> MockBackend::max_in_flight() const {
  std::lock_guard lock(mu_);
  return max_in_flight_;
}

std::string MockBackend::complete(const EndpointConfig& endpoint, const ChatRequest& request) {
  ++total_calls_;
  int attempt;
  {
    std::lock_guard lock(mu_);
    attempt = ++attempts_[slot_key(endpoint.name, request.tag)];
    const int now = ++in_flight_[endpoint.name];
    max_in_flight_[endpoint.name] = std::max(max_in_flight_[endpoint.name], now);
  }
  struct Leave {
    MockBackend* self;
    const std::string& name;
    ~Leave() {
      std::lock_guard lock(self->mu_);
      --self->in_flight_[name];
    }
  } leave{this, endpoint.name};
  if (latency_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));

  for (const auto& rule : rules_) {
    if (!rule_matches(rule, endpoint.name, request.tag)) continue;
    if (rule.value("fail", false) || attempt <= rule.value("fail_times", 0)) {
      throw Error(ErrorCode::kEndpointUnavailable, "scripted failure on " + endpoint.name);
    }
    return expand_mock_reply(rule.value("reply", ""), endpoint.name, request.tag);
  }
  throw Error(ErrorCode::kEndpointUnavailable, "no scripted reply for " + slot_key(endpoint.name, request.tag));
}

std::string render_synthesis_prompt(const pool::CodeSnippet& snippet, const std::string& tmpl) {
  require_placeholder(tmpl, "{snippet}", "synthesis");
  return substitute(tmpl, {{"{snippet}", snippet.source_text}});
}

std::string render_scoring_prompt(const InstructionSample& sample, const std::string& tmpl) {
  require_placeholder(tmpl, "{problem}", "scoring");
  require_placeholder(tmpl, "{solution}", "scoring");
  return substitute(tmpl, {{"{problem}", sample.problem}, {"{solution}", sample.solution}});
}

std::pair<std::string, std::string> parse_problem_solution(std::string_view raw) {
  const auto p = raw.find(kProblemMarker);
  const auto s = raw.rfind(kSolutionMarker);
  if (p == std::string_view::npos || s == std::string_view::npos || s < p + kProblemMarker.size()) {
    throw Error(ErrorCode::kMalformedCompletion, "completion lacks [problem]/[solution] markers");
  }
  auto q = trim(raw.substr(p + kProblemMarker.size(), s - p - kProblemMarker.size()));
  auto sol = trim(raw.substr(s + kSolutionMarker.size()));
  if (q.empty() || sol.empty()) throw Error(ErrorCode::kMalformedCompletion, "empty problem or solution");
  return {std::move(q), std::move(sol)};
}

std::string format_problem_solution(const std::string& problem, const std::string& solution) {
  return std::string(kProblemMarker) + "\n" + problem + "\n" + std::string(kSolutionMarker) + "\n" + solution;
}

std::vector<RequestOutcome> run_requests(std::span<const Job> jobs, ChatBackend& backend, int global_parallel) {
  std::vector<RequestOutcome> out(jobs.size());
  if (jobs.empty()) return out;
  std::map<std::string, std::unique_ptr<Semaphore>> gates;
  for (const auto& job : jobs) {
    if (!job.endpoint) throw Error(ErrorCode::kInvalidArgument, "job without endpoint");
    job.endpoint->validate();
    auto& g = gates[job.endpoint->name];
    if (!g) g = std::make_unique<Semaphore>(job.endpoint->max_parallel);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t idx = next++; idx < jobs.size(); idx = next++) {
      const auto& job = jobs[idx];
      const auto& ep = *job.endpoint;
      auto& gate = *gates.at(ep.name);
      auto& res = out[idx];
      int backoff = ep.retry.backoff_ms;
      for (int attempt = 1; attempt <= ep.retry.max_attempts; ++attempt) {
        res.attempts = attempt;
        gate.acquire();
        try {
          res.reply = backend.complete(ep, job.request);
          gate.release();
          res.error.clear();
          break;
        } catch (const std::exception& e) {
          gate.release();
          res.error = e.what();
        }
        if (attempt < ep.retry.max_attempts && backoff > 0) {
          std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
          backoff *= 2;
        }
      }
    }
  };
  const auto n = std::min<std::size_t>(std::max(1, global_parallel), jobs.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return out;
}

std::size_t CandidateBatch::successes() const {
  return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.ok(); }));
}

std::vector<CandidateBatch> collect_candidates(std::span<const pool::CodeSnippet> snippets, const CheckpointSet& cs,
                                               ChatBackend& backend, const GenerationOptions& opts) {
  cs.validate();
  const int m = static_cast<int>(cs.checkpoints.size());
  const int n = cs.samples_per_checkpoint;
  std::vector<Job> jobs;
  jobs.reserve(snippets.size() * cs.slots_per_snippet());
  for (const auto& snip : snippets) {
    const auto prompt = render_synthesis_prompt(snip, opts.synthesis_template);
    for (int i = 1; i <= m; ++i) {
      const auto& ep = cs.checkpoints[i - 1];
      for (int j = 1; j <= n; ++j) {
        ChatRequest req;
        req.model = ep.model_id;
        req.messages = {{"user", prompt}};
        req.temperature = cs.temperature;
        req.tag = {"synthesis", snip.id, i, j};
        jobs.push_back({&ep, std::move(req)});
      }
    }
  }
  const auto outcomes = run_requests(jobs, backend, opts.global_parallel);

  std::vector<CandidateBatch> batches;
  std::size_t k = 0;
  for (const auto& snip : snippets) {
    CandidateBatch b;
    b.snippet_id = snip.id;
    for (int i = 1; i <= m; ++i) {
      for (int j = 1; j <= n; ++j, ++k) {
        const auto& o = outcomes[k];
        CandidateSlot slot;
        slot.i = i;
        slot.j = j;
        slot.endpoint = cs.checkpoints[i - 1].name;
        slot.attempts = o.attempts;
        if (!o.reply) {
          slot.error = o.error;
        } else {
          slot.raw = *o.reply;
          try {
            auto [q, s] = parse_problem_solution(slot.raw);
            InstructionSample sample;
            sample.provenance = Provenance::self_distilled(i, j, opts.iteration);
            sample.snippet_id = snip.id;
            sample.sample_id = make_sample_id(snip.id, sample.provenance);
            sample.problem = std::move(q);
            sample.solution = std::move(s);
            sample.category = snip.category;
            slot.sample = std::move(sample);
          } catch (const Error& e) {
            slot.error = e.what();
          }
        }
        b.slots.push_back(std::move(slot));
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

CandidateBatch generate_candidates(const pool::CodeSnippet& snippet, const CheckpointSet& cs, ChatBackend& backend,
                                   const GenerationOptions& opts) {
  auto batches = collect_candidates(std::span(&snippet, 1), cs, backend, opts);
  if (batches.front().successes() == 0) {
    throw Error(ErrorCode::kAllSlotsFailed, "every candidate slot failed for snippet " + snippet.id);
  }
  return std::move(batches.front());
}

json slot_to_json(const std::string& snippet_id, const CandidateSlot& slot) {
  json j{{"snippet_id", snippet_id}, {"i", slot.i},          {"j", slot.j},
         {"endpoint", slot.endpoint}, {"attempts", slot.attempts}, {"ok", slot.ok()}};
  if (slot.sample) j["sample_id"] = slot.sample->sample_id;
  if (!slot.error.empty()) j["error"] = slot.error;
  return j;
}

std::vector<RequestOutcome> request_scores(std::span<const InstructionSample> samples, const EndpointConfig& scorer,
                                           const std::string& tmpl, double temperature, ChatBackend& backend,
                                           int global_parallel) {
  std::vector<Job> jobs;
  jobs.reserve(samples.size());
  for (const auto& s : samples) {
    ChatRequest req;
    req.model = scorer.model_id;
    req.messages = {{"user", render_scoring_prompt(s, tmpl)}};
    req.temperature = temperature;
    req.tag = {"score", s.snippet_id, s.provenance.checkpoint, s.provenance.sample};
    jobs.push_back({&scorer, std::move(req)});
  }
  return run_requests(jobs, backend, global_parallel);
}

pool::QualityClassifier make_endpoint_classifier(const EndpointConfig& endpoint, std::string tmpl,
                                                 std::shared_ptr<ChatBackend> backend) {
  require_placeholder(tmpl, "{snippet}", "classifier");
  endpoint.validate();
  return [endpoint, tmpl = std::move(tmpl), backend](const pool::CodeSnippet& snip) {
    ChatRequest req;
    req.model = endpoint.model_id;
    req.messages = {{"user", render_synthesis_prompt(snip, tmpl)}};
    req.temperature = kScorerTemperature;
    req.tag = {"classify", snip.id, 0, 0};
    const std::vector<Job> jobs{{&endpoint, req}};
    const auto out = run_requests(jobs, *backend, 1);
    if (!out[0].reply) return true;
    std::string reply = trim(*out[0].reply);
    std::transform(reply.begin(), reply.end(), reply.begin(), [](unsigned char c) { return std::tolower(c); });
    return reply.starts_with("yes");
  };
}

EndpointConfig endpoint_from_json(const json& j) {
  EndpointConfig e;
  try {
    e.name = j.at("name").get<std::string>();
    e.base_url = j.value("base_url", "");
    e.model_id = j.value("model_id", e.name);
    e.api_key_env = j.value("api_key_env", "");
    if (j.contains("api_key")) {
      throw Error(ErrorCode::kInvalidArgument, "endpoint " + e.name + ": API keys belong in environment variables");
    }
    e.max_parallel = j.value("max_parallel", e.max_parallel);
    e.timeout_ms = j.value("timeout_ms", e.timeout_ms);
    if (j.contains("retry")) {
      e.retry.max_attempts = j["retry"].value("max_attempts", e.retry.max_attempts);
      e.retry.backoff_ms = j["retry"].value("backoff_ms", e.retry.backoff_ms);
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kFormatError, std::string("endpoint config: ") + ex.what());
  }
  e.validate();
  return e;
}

SynthesisConfig synthesis_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  SynthesisConfig c;
  try {
    for (const auto& ep : j.at("checkpoints")) c.checkpoints.checkpoints.push_back(endpoint_from_json(ep));
    c.checkpoints.samples_per_checkpoint = j.value("samples_per_checkpoint", 1);
    c.checkpoints.temperature = j.value("temperature", kSynthesisTemperature);
    if (j.contains("scorer")) {
      c.scorer = endpoint_from_json(j["scorer"]);
      c.scorer_temperature = j["scorer"].value("temperature", kScorerTemperature);
    }
    if (j.contains("classifier")) c.classifier = endpoint_from_json(j["classifier"]);
    c.global_parallel = j.value("global_parallel", c.global_parallel);
    const json t = j.value("templates", json::object());
    auto load = [&](const char* key, std::string fallback) {
      if (!t.contains(key)) return fallback;
      const std::filesystem::path p = t[key].get<std::string>();
      return read_file(p.is_absolute() ? p : base_dir / p);
    };
    c.templates.synthesis = load("synthesis", "{snippet}");
    c.templates.scoring = load("scoring", "[problem]\n{problem}\n[solution]\n{solution}");
    c.templates.classify = load("classify", "");
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kFormatError, std::string("synthesis config: ") + ex.what());
  }
  c.checkpoints.validate();
  return c;
}

SynthesisConfig load_synthesis_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
  return synthesis_config_from_json(j, path.parent_path());
}

}  // namespace selfdistill::synth
