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

#include <cstdlib>
#include <filesystem>
#include <random>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "selfdistill/synthesis_client.hpp"

using namespace selfdistill;
using namespace selfdistill::synth;

namespace {

pool::CodeSnippet snippet(const std::string& text) { return pool::make_snippet(text, "python"); }

EndpointConfig endpoint(const std::string& name, int parallel = 4) {
  EndpointConfig e;
  e.name = name;
  e.model_id = name + "-model";
  e.max_parallel = parallel;
  e.retry = {3, 0};
  return e;
}

CheckpointSet checkpoints(int m, int n, int parallel = 4) {
  CheckpointSet cs;
  for (int i = 1; i <= m; ++i) cs.checkpoints.push_back(endpoint("ckpt-" + std::to_string(i), parallel));
  cs.samples_per_checkpoint = n;
  return cs;
}

json reply_rule(const std::string& reply) { return {{"kind", "synthesis"}, {"reply", reply}}; }

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

// Records every request it sees.
class RecordingBackend final : public ChatBackend {
 public:
  std::string complete(const EndpointConfig&, const ChatRequest& r) override {
    std::lock_guard lock(mu);
    seen.push_back(r);
    return "[problem] q [solution] s";
  }
  std::mutex mu;
  std::vector<ChatRequest> seen;
};

}  // namespace

TEST_CASE("synthesis prompt rendering") {
  CHECK(render_synthesis_prompt(snippet("x"), "SEED:\n{snippet}") == "SEED:\nx");
  CHECK_THROWS_AS(render_synthesis_prompt(snippet("x"), "no placeholder"), Error);
  const std::string text = "def f():\n    return '{snippet}'\n";
  const auto out = render_synthesis_prompt(snippet(text), "Use this code:\n{snippet}\nWrite a task.");
  CHECK(occurrences(out, text) == 1);
  CHECK(render_synthesis_prompt(snippet(text), "{snippet}") == text);

  InstructionSample s;
  s.problem = "P";
  s.solution = "S";
  CHECK(render_scoring_prompt(s, "Q: {problem}\nA: {solution}") == "Q: P\nA: S");
  CHECK_THROWS_AS(render_scoring_prompt(s, "Q: {problem}"), Error);
}

TEST_CASE("parse_problem_solution") {
  auto [q, s] = parse_problem_solution("[problem] P [solution] S");
  CHECK(q == "P");
  CHECK(s == "S");
  CHECK_THROWS_AS(parse_problem_solution("no markers"), Error);
  CHECK_THROWS_AS(parse_problem_solution("[problem]  [solution] S"), Error);
  CHECK_THROWS_AS(parse_problem_solution("[problem] P [solution]   "), Error);
  CHECK_THROWS_AS(parse_problem_solution("[solution] S [problem] P"), Error);

  const auto nested = parse_problem_solution("[problem] P\n[solution]\n```\nprint('[solution]')\n```\n[solution] S");
  CHECK(nested.first == "P\n[solution]\n```\nprint('[solution]')\n```");
  CHECK(nested.second == "S");
}

TEST_CASE("parse/format round trip is idempotent over fuzzed texts") {
  std::mt19937_64 gen(17);
  const std::vector<std::string> pieces{"[problem]", "[solution]", "```", "\n", " ", "def f():", "x = 1", "[", "]",
                                        "problem", "solution", "\t"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), len(1, 12);
  int parsed = 0;
  for (int t = 0; t < 2000; ++t) {
    std::string raw;
    const auto n = len(gen);
    for (std::size_t k = 0; k < n; ++k) raw += pieces[pick(gen)];
    std::pair<std::string, std::string> first;
    try {
      first = parse_problem_solution(raw);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kMalformedCompletion);
      continue;
    }
    ++parsed;
    const auto again = parse_problem_solution(format_problem_solution(first.first, first.second));
    CHECK(again == first);
  }
  CHECK(parsed > 100);
}

TEST_CASE("multi-checkpoint generation yields M*N tagged slots") {
  MockBackend mock(json{{"rules", {reply_rule("[problem] task {i}.{j} [solution] code for {snippet_id}")}}});
  const auto snip = snippet("def add(a, b):\n    return a + b\n");
  const auto batch = generate_candidates(snip, checkpoints(5, 3), mock, {});
  REQUIRE(batch.slots.size() == 15);
  CHECK(batch.successes() == 15);
  int k = 0;
  for (int i = 1; i <= 5; ++i) {
    for (int j = 1; j <= 3; ++j, ++k) {
      const auto& slot = batch.slots[k];
      CHECK(slot.i == i);
      CHECK(slot.j == j);
      CHECK(slot.endpoint == "ckpt-" + std::to_string(i));
      CHECK(slot.sample->problem == "task " + std::to_string(i) + "." + std::to_string(j));
      CHECK(slot.sample->provenance.checkpoint == i);
      CHECK(slot.sample->provenance.sample == j);
    }
  }
  CHECK(mock.total_calls() == 15);
}

TEST_CASE("single slot equals the scripted reply") {
  MockBackend mock(json{{"rules", {reply_rule("[problem] Sum a list. [solution] def f(x): return sum(x)")}}});
  const auto batch = generate_candidates(snippet("x = 1"), checkpoints(1, 1), mock, {});
  REQUIRE(batch.slots.size() == 1);
  CHECK(batch.slots[0].raw == "[problem] Sum a list. [solution] def f(x): return sum(x)");
  CHECK(batch.slots[0].sample->solution == "def f(x): return sum(x)");
}

TEST_CASE("failures are recorded per slot") {
  json t;
  t["rules"] = {{{"kind", "synthesis"}, {"endpoint", "ckpt-4"}, {"j", 2}, {"fail", true}},
                {{"kind", "synthesis"}, {"endpoint", "ckpt-2"}, {"j", 1}, {"fail_times", 2}, {"reply", "[problem] a [solution] b"}},
                {{"kind", "synthesis"}, {"endpoint", "ckpt-5"}, {"j", 3}, {"reply", "garbage"}},
                reply_rule("[problem] a [solution] b")};
  MockBackend mock(t);
  const auto batch = generate_candidates(snippet("y = 2"), checkpoints(5, 3), mock, {});
  REQUIRE(batch.slots.size() == 15);
  CHECK(batch.successes() == 13);
  const auto& dead = batch.slots[3 * 3 + 1];
  CHECK_FALSE(dead.ok());
  CHECK(dead.attempts == 3);
  CHECK(dead.error.find("EndpointUnavailable") != std::string::npos);
  const auto& retried = batch.slots[3];
  CHECK(retried.ok());
  CHECK(retried.attempts == 3);
  const auto& malformed = batch.slots[14];
  CHECK_FALSE(malformed.ok());
  CHECK(malformed.error.find("MalformedCompletion") != std::string::npos);
  CHECK(slot_to_json(batch.snippet_id, dead)["ok"] == false);
}

TEST_CASE("all slots failing raises AllSlotsFailed") {
  MockBackend mock(json{{"rules", {{{"fail", true}}}}});
  try {
    generate_candidates(snippet("z = 3"), checkpoints(2, 2), mock, {});
    FAIL("expected AllSlotsFailed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAllSlotsFailed);
  }
  const auto batches = collect_candidates(std::vector{snippet("z = 3")}, checkpoints(2, 2), mock, {});
  CHECK(batches[0].slots.size() == 4);
  CHECK(batches[0].successes() == 0);
}

TEST_CASE("per-endpoint parallelism bound holds") {
  MockBackend mock(json{{"rules", {reply_rule("[problem] a [solution] b")}}, {"latency_ms", 5}});
  std::vector<pool::CodeSnippet> snips;
  for (int k = 0; k < 6; ++k) snips.push_back(snippet("v = " + std::to_string(k)));
  auto cs = checkpoints(3, 4, 2);
  cs.checkpoints[2].max_parallel = 1;
  GenerationOptions opts;
  opts.global_parallel = 16;
  const auto batches = collect_candidates(snips, cs, mock, opts);
  CHECK(batches.size() == 6);
  const auto peaks = mock.max_in_flight();
  CHECK(peaks.at("ckpt-1") <= 2);
  CHECK(peaks.at("ckpt-2") <= 2);
  CHECK(peaks.at("ckpt-3") == 1);
  CHECK(peaks.at("ckpt-1") >= 1);
}

TEST_CASE("requests carry model, temperature and n=1") {
  RecordingBackend rec;
  auto cs = checkpoints(2, 1);
  CHECK(cs.temperature == 0.2);
  collect_candidates(std::vector{snippet("a = 1")}, cs, rec, {});
  REQUIRE(rec.seen.size() == 2);
  for (const auto& r : rec.seen) {
    const auto wire = r.to_wire();
    CHECK(wire["temperature"] == 0.2);
    CHECK(wire["n"] == 1);
    CHECK(wire["messages"][0]["content"] == "a = 1");
    CHECK_FALSE(wire.contains("tag"));
  }
}

TEST_CASE("mock digits are deterministic") {
  const RequestTag tag{"score", "abc", 1, 2};
  const auto a = expand_mock_reply("{digit:0} {digit:1} {digit:2}", "scorer", tag);
  CHECK(a == expand_mock_reply("{digit:0} {digit:1} {digit:2}", "scorer", tag));
  CHECK(a.size() == 5);
  CHECK(expand_mock_reply("{endpoint}/{snippet_id}/{i}/{j}", "e", tag) == "e/abc/1/2");
}

TEST_CASE("endpoint classifier adapter") {
  json t;
  t["rules"] = {{{"kind", "classify"}, {"snippet", pool::make_snippet("bad = 1", "python").id}, {"reply", "No."}},
                {{"kind", "classify"}, {"reply", "Yes, useful."}}};
  auto mock = std::make_shared<MockBackend>(t);
  const auto keep = make_endpoint_classifier(endpoint("judge"), "Is this useful?\n{snippet}", mock);
  CHECK(keep(snippet("good = 1")));
  CHECK_FALSE(keep(snippet("bad = 1")));
  CHECK_THROWS_AS(make_endpoint_classifier(endpoint("judge"), "no slot", mock), Error);
}

TEST_CASE("configuration loading") {
  const auto dir = std::filesystem::temp_directory_path() / "sd_synth_cfg";
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "synth.txt", "Snippet:\n{snippet}\n");
  json cfg = {{"checkpoints", {{{"name", "c1"}, {"base_url", "http://localhost:1/v1"}, {"max_parallel", 2}},
                               {{"name", "c2"}, {"retry", {{"max_attempts", 5}, {"backoff_ms", 10}}}}}},
              {"samples_per_checkpoint", 3},
              {"scorer", {{"name", "judge"}}},
              {"templates", {{"synthesis", "synth.txt"}}}};
  write_file_atomic(dir / "cfg.json", cfg.dump());
  const auto c = load_synthesis_config(dir / "cfg.json");
  CHECK(c.checkpoints.slots_per_snippet() == 6);
  CHECK(c.checkpoints.temperature == 0.2);
  CHECK(c.scorer_temperature == 0.0);
  CHECK(c.checkpoints.checkpoints[1].retry.max_attempts == 5);
  CHECK(c.templates.synthesis == "Snippet:\n{snippet}\n");

  cfg["checkpoints"][0]["api_key"] = "secret";
  CHECK_THROWS_AS(synthesis_config_from_json(cfg, dir), Error);
  cfg["checkpoints"][0].erase("api_key");
  cfg["checkpoints"][0]["max_parallel"] = 0;
  CHECK_THROWS_AS(synthesis_config_from_json(cfg, dir), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("http backend speaks the chat-completion schema") {
  httplib::Server srv;
  json last_body;
  std::string last_auth;
  std::mutex mu;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    last_body = json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    if (last_body["model"] == "broken") {
      res.status = 500;
      return;
    }
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "[problem] P [solution] S"}}}}}}}.dump(),
                    "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("SD_TEST_KEY", "k123", 1);
  auto ep = endpoint("local");
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  ep.api_key_env = "SD_TEST_KEY";
  ep.timeout_ms = 5000;
  HttpChatBackend http;
  ChatRequest req;
  req.model = "m";
  req.messages = {{"user", "hi"}};
  req.temperature = 0.2;
  CHECK(http.complete(ep, req) == "[problem] P [solution] S");
  {
    std::lock_guard lock(mu);
    CHECK(last_body["model"] == "m");
    CHECK(last_body["n"] == 1);
    CHECK(last_body["messages"][0]["content"] == "hi");
    CHECK(last_auth == "Bearer k123");
  }
  req.model = "broken";
  CHECK_THROWS_AS(http.complete(ep, req), Error);
  ep.api_key_env = "SD_TEST_KEY_UNSET";
  CHECK_THROWS_AS(http.complete(ep, req), Error);

  srv.stop();
  th.join();
}
