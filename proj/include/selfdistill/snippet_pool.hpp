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
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "selfdistill/common.hpp"
#include "selfdistill/tokenizer.hpp"

namespace selfdistill::pool {

struct MinHashSignature {
  std::vector<std::uint64_t> values;
  std::uint64_t perm_seed = 0;
  std::size_t shingle_size = 0;

  bool operator==(const MinHashSignature&) const = default;
};

struct CodeSnippet {
  std::string id;  // sha256 of source_text
  std::string source_text;
  std::vector<Token> tokens;
  std::string language_tag = "python";
  std::optional<int> category;
  std::optional<MinHashSignature> signature;
};

// Builds a snippet with its content-derived id and tokens. Rejects input that
// is not valid UTF-8.
CodeSnippet make_snippet(std::string source_text, std::string language_tag = "python");

struct DedupConfig {
  std::size_t perms = 128;
  std::size_t bands = 32;
  std::size_t rows = 4;
  double jaccard_threshold = 0.5;
  std::size_t shingle_size = 5;
  std::uint64_t seed = 0;
  // Independent LSH passes, each with its own permutation seed derived from
  // `seed`. Candidates are unioned; verification averages across passes.
  std::size_t lsh_rounds = 2;

  // Throws InvalidArgument when b*r != P or a field is out of range.
  void validate() const;
  std::uint64_t round_seed(std::size_t round) const { return hash_combine(seed, round); }
};

// Hash of one shingle (a window of consecutive tokens).
std::uint64_t shingle_hash(std::span<const Token> window);

// Set of distinct shingle hashes of a token sequence.
std::vector<std::uint64_t> shingle_set(std::span<const Token> tokens, std::size_t shingle_size);

MinHashSignature signature_from_hashes(std::span<const std::uint64_t> shingle_hashes, std::size_t perms,
                                       std::uint64_t perm_seed, std::size_t shingle_size);

// values[p] = min over shingles of hash_p(shingle). Throws TooShort when the
// sequence has fewer tokens than the shingle width.
MinHashSignature shingle_signature(std::span<const Token> tokens, const DedupConfig& cfg,
                                   std::uint64_t perm_seed);
inline MinHashSignature shingle_signature(std::span<const Token> tokens, const DedupConfig& cfg) {
  return shingle_signature(tokens, cfg, cfg.seed);
}

// Fraction of agreeing positions. Throws IncompatibleSignatures on seed,
// shingle-width or length mismatch.
double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b);

// Pairs (i, j), i < j, sharing at least one identical band of `rows`
// consecutive values. Sorted ascending.
std::vector<std::pair<std::size_t, std::size_t>> lsh_candidates(std::span<const MinHashSignature> signatures,
                                                                const DedupConfig& cfg);

struct RemovedDuplicate {
  std::string removed_id;
  std::string kept_id;
  double estimated_jaccard = 0.0;
};

struct DedupResult {
  std::vector<CodeSnippet> kept;
  std::vector<RemovedDuplicate> removed;
};

// Near-duplicate removal. Snippets are visited in ascending id order (input
// position breaks ties between byte-identical texts); a snippet is dropped
// when a verified candidate pair links it to an already kept snippet, and the
// report names the smallest such kept id. Signature errors (TooShort)
// propagate.
DedupResult dedup_pool(std::span<const CodeSnippet> snippets, const DedupConfig& cfg);

struct ValidityReport {
  bool has_return = false;
  bool syntax_ok = false;
  bool has_docstring = false;
  std::vector<std::string> blocked_imports;

  bool valid() const { return has_return && syntax_ok && has_docstring && blocked_imports.empty(); }
};

class FunctionValidator {
 public:
  virtual ~FunctionValidator() = default;
  virtual ValidityReport validate(const CodeSnippet& s, const std::set<std::string>& blocklist) const = 0;
};

// Balanced delimiters, consistent indentation and def/return recognition.
// Not a grammar: a full parser can be plugged in through FunctionValidator.
class HeuristicValidator final : public FunctionValidator {
 public:
  ValidityReport validate(const CodeSnippet& s, const std::set<std::string>& blocklist) const override;
};

ValidityReport validate_function(const CodeSnippet& s, const std::set<std::string>& blocklist);

struct DecontamResult {
  std::vector<CodeSnippet> kept;
  std::vector<std::string> removed_ids;
};

// Drops every snippet sharing at least one token n-gram with any benchmark
// text. Texts with fewer than n tokens contribute no n-grams.
DecontamResult decontaminate(std::span<const CodeSnippet> snippets, std::span<const std::string> benchmark_corpus,
                             std::size_t n);

// Optional quality gate; returns true to keep the snippet.
using QualityClassifier = std::function<bool(const CodeSnippet&)>;

struct PoolOptions {
  DedupConfig dedup;
  std::set<std::string> blocklist = {"os", "sys"};
  std::size_t decontam_ngram = 10;
  std::vector<std::string> benchmark_corpus;
  std::shared_ptr<const FunctionValidator> validator = std::make_shared<HeuristicValidator>();
  QualityClassifier classifier;
};

struct RemovalRecord {
  std::string id;
  std::string stage;  // "dedup" | "validity" | "quality" | "decontam"
  json detail;
};

struct PoolBuildResult {
  std::vector<CodeSnippet> pool;
  std::vector<RemovalRecord> removals;
};

// Dedup, validity filter, optional quality classifier, decontamination.
// Snippets too short to shingle are dropped up front as invalid.
PoolBuildResult build_pool(std::vector<CodeSnippet> snippets, const PoolOptions& opts);

// Record form {id, text, language[, category]}.
json snippet_to_json(const CodeSnippet& s);
CodeSnippet snippet_from_json(const json& record);
json removal_to_json(const RemovalRecord& r);

}  // namespace selfdistill::pool
