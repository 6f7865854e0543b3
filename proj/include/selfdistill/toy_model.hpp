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
#include <span>
#include <string_view>
#include <vector>

#include "selfdistill/influence.hpp"
#include "selfdistill/instruction_sample.hpp"

namespace selfdistill::influence {

struct ToyTrainingMeta {
  int steps = 500;
  double learning_rate = 10.0;
  std::uint64_t seed = 0;
};

// Character-bigram next-byte model: P(b | a) = softmax(W[a, :])[b] over a
// 256 x 256 logit table (d = 65,536, row-major).
class ToyReferenceModel {
 public:
  static constexpr std::size_t kVocab = 256;
  static constexpr std::size_t kDim = kVocab * kVocab;

  ToyReferenceModel() : logits_(kDim, 0.0) {}

  // Seeded N(0, 0.01^2) logits.
  static ToyReferenceModel initialized(std::uint64_t seed);

  // Row-wise log of the empirical conditionals (the cross-entropy optimum);
  // unseen transitions get `floor_logit`, unseen rows stay zero.
  static ToyReferenceModel closed_form(std::span<const InstructionSample> samples, double floor_logit = -60.0);

  double& at(std::size_t a, std::size_t b) { return logits_[a * kVocab + b]; }
  double at(std::size_t a, std::size_t b) const { return logits_[a * kVocab + b]; }
  std::span<const double> logits() const { return logits_; }
  std::span<double> logits() { return logits_; }

  double probability(unsigned char a, unsigned char b) const;

  ToyTrainingMeta meta;
  std::vector<double> loss_history;  // loss before step 0, then after each step

 private:
  std::vector<double> logits_;
};

// Transition counts C[a][b] over every sample's text.
std::vector<double> bigram_counts(std::span<const InstructionSample> samples);

// Mean next-byte cross-entropy of `text`. Throws TooShort below 2 bytes.
double text_loss(const ToyReferenceModel& m, std::string_view text);
// Gradient of text_loss with respect to the logits (length 65,536).
std::vector<double> text_gradient(const ToyReferenceModel& m, std::string_view text);

// Full-batch gradient descent on the pooled cross-entropy of the samples'
// texts. Each step halves the step size until the loss does not increase.
// Throws EmptyCorpus.
ToyReferenceModel toy_reference_train(std::span<const InstructionSample> proprietary, const ToyTrainingMeta& meta);

GradientVector toy_reference_gradient(const InstructionSample& sample, const ToyReferenceModel& m);

class ToyGradientProvider final : public GradientProvider {
 public:
  explicit ToyGradientProvider(ToyReferenceModel model) : model_(std::move(model)) {}
  std::size_t dimension() const override { return ToyReferenceModel::kDim; }
  GradientVector gradient(const InstructionSample& sample) const override {
    return toy_reference_gradient(sample, model_);
  }
  const ToyReferenceModel& model() const { return model_; }

 private:
  ToyReferenceModel model_;
};

void save_toy_model(const std::filesystem::path& path, const ToyReferenceModel& m);
ToyReferenceModel load_toy_model(const std::filesystem::path& path);

}  // namespace selfdistill::influence
