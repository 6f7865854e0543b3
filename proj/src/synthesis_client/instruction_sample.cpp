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

#include "selfdistill/instruction_sample.hpp"

namespace selfdistill {

std::string make_sample_id(const std::string& snippet_id, const Provenance& p) {
  const std::string stem = snippet_id.substr(0, 16);
  if (p.kind == Provenance::Kind::kProprietary) return "p-" + stem;
  return "sd-" + stem + "-it" + std::to_string(p.iteration) + "-c" + std::to_string(p.checkpoint) + "-s" +
         std::to_string(p.sample);
}

json sample_to_json(const InstructionSample& s) {
  json j;
  j["sample_id"] = s.sample_id;
  j["snippet_id"] = s.snippet_id;
  j["problem"] = s.problem;
  j["solution"] = s.solution;
  if (s.provenance.kind == Provenance::Kind::kProprietary) {
    j["provenance"] = json{{"kind", "proprietary"}};
  } else {
    j["provenance"] = json{{"kind", "self_distilled"},
                           {"checkpoint", s.provenance.checkpoint},
                           {"sample", s.provenance.sample},
                           {"iteration", s.provenance.iteration}};
  }
  if (s.category) j["category"] = *s.category;
  if (s.aspect_scores) j["aspect_scores"] = s.aspect_scores->scores;
  if (s.aggregate_score) j["aggregate_score"] = *s.aggregate_score;
  if (s.influence) j["influence"] = *s.influence;
  return j;
}

InstructionSample sample_from_json(const json& j) {
  InstructionSample s;
  try {
    s.problem = j.at("problem").get<std::string>();
    s.solution = j.at("solution").get<std::string>();
    s.snippet_id = j.value("snippet_id", std::string());
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      if (p.value("kind", std::string("proprietary")) == "self_distilled") {
        s.provenance = Provenance::self_distilled(p.at("checkpoint").get<int>(), p.at("sample").get<int>(),
                                                  p.value("iteration", 0));
      }
    }
    if (j.contains("sample_id")) {
      s.sample_id = j["sample_id"].get<std::string>();
    } else if (s.provenance.kind == Provenance::Kind::kProprietary) {
      s.sample_id = "p-" + sha256_hex(sample_text(s)).substr(0, 16);
    } else {
      s.sample_id = make_sample_id(s.snippet_id, s.provenance);
    }
    if (j.contains("category") && !j["category"].is_null()) s.category = j["category"].get<int>();
    if (j.contains("aspect_scores")) s.aspect_scores = AspectScoreVector{j["aspect_scores"].get<std::vector<int>>()};
    if (j.contains("aggregate_score")) s.aggregate_score = j["aggregate_score"].get<double>();
    if (j.contains("influence")) s.influence = j["influence"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("instruction sample record: ") + e.what());
  }
  if (s.problem.empty() || s.solution.empty()) throw Error(ErrorCode::kFormatError, "problem and solution must be non-empty");
  if (s.provenance.kind == Provenance::Kind::kSelfDistilled &&
      (s.provenance.checkpoint < 1 || s.provenance.sample < 1)) {
    throw Error(ErrorCode::kFormatError, "self-distilled indices are 1-based");
  }
  return s;
}

}  // namespace selfdistill
