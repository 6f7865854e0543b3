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

#include "selfdistill/aspect_scoring.hpp"

#include <Eigen/Dense>

#include <cctype>
#include <cmath>
#include <optional>
#include <tuple>

namespace selfdistill::scoring {
namespace {

struct Number {
  std::string text;
  bool integral = true;
};

// Numbers appearing in `line`, with an optional leading minus sign.
std::vector<Number> scan_numbers(std::string_view line) {
  std::vector<Number> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const bool neg = line[i] == '-' && i + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[i + 1]));
    if (!neg && !std::isdigit(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    // Digits glued to a word ("q3_proj", "gpt4") are not scores.
    if (i > 0 && (std::isalpha(static_cast<unsigned char>(line[i - 1])) || line[i - 1] == '_')) {
      while (i < line.size() && std::isalnum(static_cast<unsigned char>(line[i]))) ++i;
      continue;
    }
    Number n;
    const std::size_t start = i;
    if (neg) ++i;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i + 1 < line.size() && line[i] == '.' && std::isdigit(static_cast<unsigned char>(line[i + 1]))) {
      n.integral = false;
      ++i;
      while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    }
    n.text = std::string(line.substr(start, i - start));
    out.push_back(std::move(n));
  }
  return out;
}

// "name: 7" / "name = 7" / "name - 7/9": the value after the last separator.
std::optional<Number> labelled_value(std::string_view line) {
  const auto sep = line.find_last_of(":=");
  if (sep == std::string_view::npos) return std::nullopt;
  const std::string label = trim(line.substr(0, sep));
  bool has_alpha = false;
  for (char c : label) has_alpha = has_alpha || std::isalpha(static_cast<unsigned char>(c));
  if (!has_alpha) return std::nullopt;
  auto nums = scan_numbers(line.substr(sep + 1));
  if (nums.empty()) return std::nullopt;
  return nums.front();
}

}  // namespace

const std::vector<std::string>& default_aspect_names() {
  static const std::vector<std::string> names = {
      "problem_solution_consistency",
      "problem_clarity",
      "problem_completeness",
      "solution_correctness",
      "solution_efficiency",
      "code_readability",
      "edge_case_handling",
      "test_coverage",
      "difficulty",
      "educational_value",
  };
  return names;
}

void validate_scores(const AspectScoreVector& x, std::size_t aspects) {
  if (x.scores.size() != aspects) {
    throw Error(ErrorCode::kWrongArity,
                "expected " + std::to_string(aspects) + " scores, got " + std::to_string(x.scores.size()));
  }
  for (int v : x.scores) {
    if (v < 0 || v > kMaxAspectScore) throw Error(ErrorCode::kOutOfRange, "score " + std::to_string(v) + " not in [0,9]");
  }
}

AspectScoreVector parse_aspect_scores(std::string_view raw, std::size_t aspects) {
  if (trim(raw).empty()) throw Error(ErrorCode::kUnparseable, "empty scorer output");
  std::vector<Number> labelled;
  std::vector<Number> all;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    auto end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    const auto line = raw.substr(pos, end - pos);
    if (auto v = labelled_value(line)) labelled.push_back(*v);
    for (auto& n : scan_numbers(line)) all.push_back(std::move(n));
    pos = end + 1;
  }
  const auto& chosen = labelled.empty() ? all : labelled;
  if (chosen.empty()) throw Error(ErrorCode::kUnparseable, "no scores found");
  AspectScoreVector x;
  for (const auto& n : chosen) {
    if (!n.integral) throw Error(ErrorCode::kUnparseable, "non-integer score " + n.text);
    if (n.text.size() > 9) throw Error(ErrorCode::kOutOfRange, "score " + n.text + " not in [0,9]");
    x.scores.push_back(std::stoi(n.text));
  }
  validate_scores(x, aspects);
  return x;
}

double aggregate_score(const AspectScoreVector& x, const WeightVector& w) {
  if (x.scores.size() != w.w.size()) {
    throw Error(ErrorCode::kDimensionMismatch, std::to_string(x.scores.size()) + " scores vs " +
                                                   std::to_string(w.w.size()) + " weights");
  }
  double s = 0.0;
  for (std::size_t z = 0; z < w.w.size(); ++z) s += w.w[z] * static_cast<double>(x.scores[z]);
  return s;
}

Aggregation aggregation_from_string(std::string_view name) {
  if (name == "weighted") return Aggregation::kWeighted;
  if (name == "raw" || name == "raw_composite") return Aggregation::kRawComposite;
  if (name == "average" || name == "mean") return Aggregation::kAverage;
  throw Error(ErrorCode::kInvalidArgument, "unknown aggregation '" + std::string(name) + "'");
}

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kWeighted: return "weighted";
    case Aggregation::kRawComposite: return "raw_composite";
    case Aggregation::kAverage: return "average";
  }
  return "weighted";
}

double aggregate(const AspectScoreVector& x, const WeightVector& w, Aggregation strategy) {
  if (strategy == Aggregation::kWeighted) return aggregate_score(x, w);
  double sum = 0.0;
  for (int v : x.scores) sum += v;
  if (strategy == Aggregation::kRawComposite) return sum;
  if (x.scores.empty()) throw Error(ErrorCode::kDimensionMismatch, "no scores to average");
  return sum / static_cast<double>(x.scores.size());
}

WeightVector fit_weights(std::span<const ExperimentRecord> experiments, double lambda) {
  if (experiments.empty()) throw Error(ErrorCode::kEmpty, "fit_weights needs at least one experiment");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  const std::size_t z_dim = experiments.front().mean_scores.size();
  if (z_dim == 0) throw Error(ErrorCode::kDimensionMismatch, "empty score vectors");
  const auto k_dim = static_cast<Eigen::Index>(experiments.size());
  Eigen::MatrixXd x(k_dim, static_cast<Eigen::Index>(z_dim));
  Eigen::VectorXd y(k_dim);
  for (Eigen::Index k = 0; k < k_dim; ++k) {
    const auto& rec = experiments[static_cast<std::size_t>(k)];
    if (rec.mean_scores.size() != z_dim) throw Error(ErrorCode::kDimensionMismatch, "experiment score lengths differ");
    for (std::size_t z = 0; z < z_dim; ++z) x(k, static_cast<Eigen::Index>(z)) = rec.mean_scores[z];
    y(k) = rec.performance;
  }

  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = x.transpose() * y;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  const double cond = min_ev > 0.0 ? max_ev / min_ev : std::numeric_limits<double>::infinity();

  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  const bool singular = llt.info() != Eigen::Success || !(min_ev > max_ev * 1e-13);
  if (lambda == 0.0 && singular) {
    throw Error(ErrorCode::kSingularSystem, "X^T X is singular; use lambda > 0");
  }
  Eigen::VectorXd w;
  if (llt.info() == Eigen::Success) {
    w = llt.solve(rhs);
    // One step of iterative refinement against the normal-equation residual.
    w += llt.solve(rhs - gram * w);
  } else {
    w = gram.ldlt().solve(rhs);
  }

  WeightVector out;
  out.w.assign(w.data(), w.data() + w.size());
  out.lambda = lambda;
  out.diagnostics.residual_norm = (y - x * w).norm();
  out.diagnostics.condition_estimate = cond;
  for (double v : out.w) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kSingularSystem, "non-finite weights");
  }
  return out;
}

std::vector<double> mean_aspect_scores(std::span<const InstructionSample> samples) {
  std::vector<double> mean;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (!s.aspect_scores) continue;
    if (mean.empty()) mean.assign(s.aspect_scores->scores.size(), 0.0);
    if (s.aspect_scores->scores.size() != mean.size()) throw Error(ErrorCode::kDimensionMismatch, "mixed aspect counts");
    for (std::size_t z = 0; z < mean.size(); ++z) mean[z] += s.aspect_scores->scores[z];
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kEmpty, "no scored samples");
  for (double& v : mean) v /= static_cast<double>(n);
  return mean;
}

InstructionSample select_best_candidate(std::span<const InstructionSample> candidates, const WeightVector& w,
                                        Aggregation strategy) {
  const InstructionSample* best = nullptr;
  double best_score = 0.0;
  auto key = [](const InstructionSample& s) {
    return std::tie(s.provenance.checkpoint, s.provenance.sample, s.sample_id);
  };
  for (const auto& c : candidates) {
    if (!c.aspect_scores) continue;
    double score;
    try {
      validate_scores(*c.aspect_scores, c.aspect_scores->scores.size());
      score = aggregate(*c.aspect_scores, w, strategy);
    } catch (const Error&) {
      continue;
    }
    if (!std::isfinite(score)) continue;
    if (best == nullptr || score > best_score || (score == best_score && key(c) < key(*best))) {
      best = &c;
      best_score = score;
    }
  }
  if (best == nullptr) throw Error(ErrorCode::kNoValidCandidates, "no candidate has a valid score");
  InstructionSample out = *best;
  out.aggregate_score = best_score;
  return out;
}

json weights_to_json(const WeightVector& w) {
  return json{{"w", w.w},
              {"lambda", w.lambda},
              {"fit_diagnostics",
               {{"residual_norm", w.diagnostics.residual_norm}, {"condition_estimate", w.diagnostics.condition_estimate}}}};
}

WeightVector weights_from_json(const json& j) {
  WeightVector w;
  try {
    w.w = j.at("w").get<std::vector<double>>();
    w.lambda = j.value("lambda", 0.0);
    if (j.contains("fit_diagnostics")) {
      w.diagnostics.residual_norm = j["fit_diagnostics"].value("residual_norm", 0.0);
      w.diagnostics.condition_estimate = j["fit_diagnostics"].value("condition_estimate", 1.0);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("weights: ") + e.what());
  }
  for (double v : w.w) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kFormatError, "weights must be finite");
  }
  return w;
}

ExperimentRecord experiment_from_json(const json& j) {
  try {
    return {j.at("mean_scores").get<std::vector<double>>(), j.at("performance").get<double>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("experiment record: ") + e.what());
  }
}

}  // namespace selfdistill::scoring
