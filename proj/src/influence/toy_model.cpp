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

#include "selfdistill/toy_model.hpp"

#include <algorithm>
#include <cmath>

namespace selfdistill::influence {
namespace {

constexpr std::size_t V = ToyReferenceModel::kVocab;

double row_logsumexp(const double* row) {
  double mx = row[0];
  for (std::size_t b = 1; b < V; ++b) mx = std::max(mx, row[b]);
  double s = 0.0;
  for (std::size_t b = 0; b < V; ++b) s += std::exp(row[b] - mx);
  return mx + std::log(s);
}

void add_counts(std::string_view text, std::vector<double>& counts) {
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    const auto a = static_cast<unsigned char>(text[i]);
    const auto b = static_cast<unsigned char>(text[i + 1]);
    counts[a * V + b] += 1.0;
  }
}

struct RowTotals {
  std::vector<double> n;  // n[a] = sum_b C[a][b]
  double total = 0.0;
};

RowTotals totals(const std::vector<double>& counts) {
  RowTotals t;
  t.n.assign(V, 0.0);
  for (std::size_t a = 0; a < V; ++a) {
    for (std::size_t b = 0; b < V; ++b) t.n[a] += counts[a * V + b];
    t.total += t.n[a];
  }
  return t;
}

double counts_loss(std::span<const double> w, const std::vector<double>& counts, const RowTotals& t) {
  double loss = 0.0;
  for (std::size_t a = 0; a < V; ++a) {
    if (t.n[a] == 0.0) continue;
    const double* row = w.data() + a * V;
    double dot = 0.0;
    for (std::size_t b = 0; b < V; ++b) dot += counts[a * V + b] * row[b];
    loss += t.n[a] * row_logsumexp(row) - dot;
  }
  return loss / t.total;
}

std::vector<double> counts_gradient(std::span<const double> w, const std::vector<double>& counts, const RowTotals& t) {
  std::vector<double> g(ToyReferenceModel::kDim, 0.0);
  for (std::size_t a = 0; a < V; ++a) {
    if (t.n[a] == 0.0) continue;
    const double* row = w.data() + a * V;
    const double lse = row_logsumexp(row);
    for (std::size_t b = 0; b < V; ++b) {
      g[a * V + b] = (t.n[a] * std::exp(row[b] - lse) - counts[a * V + b]) / t.total;
    }
  }
  return g;
}

std::vector<double> text_counts(std::string_view text) {
  if (text.size() < 2) throw Error(ErrorCode::kTooShort, "toy model needs at least 2 characters");
  std::vector<double> counts(ToyReferenceModel::kDim, 0.0);
  add_counts(text, counts);
  return counts;
}

}  // namespace

ToyReferenceModel ToyReferenceModel::initialized(std::uint64_t seed) {
  ToyReferenceModel m;
  Rng rng(seed);
  for (double& x : m.logits_) x = 0.01 * rng.normal();
  m.meta.seed = seed;
  return m;
}

ToyReferenceModel ToyReferenceModel::closed_form(std::span<const InstructionSample> samples, double floor_logit) {
  const auto counts = bigram_counts(samples);
  const auto t = totals(counts);
  ToyReferenceModel m;
  for (std::size_t a = 0; a < V; ++a) {
    if (t.n[a] == 0.0) continue;
    for (std::size_t b = 0; b < V; ++b) {
      const double c = counts[a * V + b];
      m.at(a, b) = c > 0.0 ? std::log(c / t.n[a]) : floor_logit;
    }
  }
  m.meta.steps = 0;
  return m;
}

double ToyReferenceModel::probability(unsigned char a, unsigned char b) const {
  const double* row = logits_.data() + static_cast<std::size_t>(a) * V;
  return std::exp(row[b] - row_logsumexp(row));
}

std::vector<double> bigram_counts(std::span<const InstructionSample> samples) {
  std::vector<double> counts(ToyReferenceModel::kDim, 0.0);
  for (const auto& s : samples) add_counts(sample_text(s), counts);
  return counts;
}

double text_loss(const ToyReferenceModel& m, std::string_view text) {
  const auto counts = text_counts(text);
  return counts_loss(m.logits(), counts, totals(counts));
}

std::vector<double> text_gradient(const ToyReferenceModel& m, std::string_view text) {
  const auto counts = text_counts(text);
  return counts_gradient(m.logits(), counts, totals(counts));
}

ToyReferenceModel toy_reference_train(std::span<const InstructionSample> proprietary, const ToyTrainingMeta& meta) {
  if (proprietary.empty()) throw Error(ErrorCode::kEmptyCorpus, "toy reference model needs proprietary samples");
  const auto counts = bigram_counts(proprietary);
  const auto t = totals(counts);
  if (t.total == 0.0) throw Error(ErrorCode::kEmptyCorpus, "proprietary samples contain no character transitions");
  if (meta.steps < 0 || !(meta.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "toy training needs steps >= 0 and a positive learning rate");
  }

  ToyReferenceModel m = ToyReferenceModel::initialized(meta.seed);
  m.meta = meta;
  auto w = m.logits();
  double loss = counts_loss(w, counts, t);
  m.loss_history.push_back(loss);
  std::vector<double> trial(ToyReferenceModel::kDim);
  for (int step = 0; step < meta.steps; ++step) {
    const auto g = counts_gradient(w, counts, t);
    double lr = meta.learning_rate;
    bool accepted = false;
    for (int halving = 0; halving < 60 && !accepted; ++halving, lr *= 0.5) {
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = w[i] - lr * g[i];
      const double next = counts_loss(trial, counts, t);
      if (next <= loss) {
        std::copy(trial.begin(), trial.end(), w.begin());
        loss = next;
        accepted = true;
      }
    }
    m.loss_history.push_back(loss);
  }
  return m;
}

GradientVector toy_reference_gradient(const InstructionSample& sample, const ToyReferenceModel& m) {
  return {sample.sample_id, text_gradient(m, sample_text(sample)), ProviderTag::kToy};
}

void save_toy_model(const std::filesystem::path& path, const ToyReferenceModel& m) {
  json j;
  j["format"] = "selfdistill-toy-bigram";
  j["vocab"] = ToyReferenceModel::kVocab;
  j["training_meta"] = {{"steps", m.meta.steps}, {"learning_rate", m.meta.learning_rate}, {"seed", m.meta.seed}};
  j["loss_history"] = m.loss_history;
  j["logits"] = std::vector<double>(m.logits().begin(), m.logits().end());
  write_file_atomic(path, j.dump());
}

ToyReferenceModel load_toy_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "selfdistill-toy-bigram" || !j.contains("logits") ||
      j["logits"].size() != ToyReferenceModel::kDim) {
    throw Error(ErrorCode::kFormatError, path.string() + ": not a toy bigram model");
  }
  ToyReferenceModel m;
  const auto logits = j["logits"].get<std::vector<double>>();
  for (double x : logits) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kFormatError, path.string() + ": non-finite logit");
  }
  std::copy(logits.begin(), logits.end(), m.logits().begin());
  const auto& tm = j.at("training_meta");
  m.meta.steps = tm.value("steps", 0);
  m.meta.learning_rate = tm.value("learning_rate", 0.0);
  m.meta.seed = tm.value("seed", std::uint64_t{0});
  m.loss_history = j.value("loss_history", std::vector<double>{});
  return m;
}

}  // namespace selfdistill::influence
