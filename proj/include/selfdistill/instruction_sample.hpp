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

#include <optional>
#include <string>
#include <vector>

#include "selfdistill/common.hpp"

namespace selfdistill {

// Z integer aspect scores, each in [0, 9].
struct AspectScoreVector {
  std::vector<int> scores;

  bool operator==(const AspectScoreVector&) const = default;
};

struct Provenance {
  enum class Kind { kProprietary, kSelfDistilled };

  Kind kind = Kind::kProprietary;
  // 1-based checkpoint (i) and sample (j) indices; zero for proprietary data.
  int checkpoint = 0;
  int sample = 0;
  int iteration = 0;

  static Provenance proprietary() { return {}; }
  static Provenance self_distilled(int checkpoint, int sample, int iteration) {
    return {Kind::kSelfDistilled, checkpoint, sample, iteration};
  }
  bool operator==(const Provenance&) const = default;
};

// A problem-solution pair (q, s) generated from one snippet.
struct InstructionSample {
  std::string sample_id;
  std::string snippet_id;
  std::string problem;
  std::string solution;
  Provenance provenance;
  std::optional<int> category;
  std::optional<AspectScoreVector> aspect_scores;
  std::optional<double> aggregate_score;
  std::optional<double> influence;
};

// Text a reference model sees for one sample.
inline std::string sample_text(const InstructionSample& s) { return s.problem + "\n" + s.solution; }

std::string make_sample_id(const std::string& snippet_id, const Provenance& p);

json sample_to_json(const InstructionSample& s);
// Missing sample_id on a proprietary record is derived from its content.
InstructionSample sample_from_json(const json& j);

}  // namespace selfdistill
