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

#include "selfdistill/snippet_pool.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace selfdistill::pool {
namespace {

struct BandKeyHash {
  std::size_t operator()(const std::vector<std::uint64_t>& v) const noexcept {
    std::uint64_t h = 0x51ed270b27f0a1b3ULL;
    for (auto x : v) h = hash_combine(h, x);
    return static_cast<std::size_t>(h);
  }
};

void require_compatible(const MinHashSignature& a, const MinHashSignature& b) {
  if (a.perm_seed != b.perm_seed || a.shingle_size != b.shingle_size || a.values.size() != b.values.size() ||
      a.values.empty()) {
    throw Error(ErrorCode::kIncompatibleSignatures, "signatures differ in seed, shingle width or length");
  }
}

bool is_ident(const Token& t, std::string_view text) { return t.kind == TokenKind::kIdentifier && t.text == text; }
bool is_delim(const Token& t, std::string_view text) { return t.kind == TokenKind::kDelimiter && t.text == text; }

std::string ngram_key(std::span<const Token> window) {
  std::string key;
  for (const auto& t : window) {
    key.push_back(static_cast<char>(t.kind));
    key += t.text;
    key.push_back('\x1f');
  }
  return key;
}

}  // namespace

CodeSnippet make_snippet(std::string source_text, std::string language_tag) {
  if (!is_valid_utf8(source_text)) throw Error(ErrorCode::kInvalidUtf8, "snippet text is not valid UTF-8");
  CodeSnippet s;
  s.id = sha256_hex(source_text);
  s.tokens = tokenize_code(source_text);
  s.source_text = std::move(source_text);
  s.language_tag = std::move(language_tag);
  return s;
}

void DedupConfig::validate() const {
  if (perms == 0 || bands == 0 || rows == 0 || shingle_size == 0 || lsh_rounds == 0) {
    throw Error(ErrorCode::kInvalidArgument, "dedup parameters must be positive");
  }
  if (bands * rows != perms) throw Error(ErrorCode::kInvalidArgument, "bands * rows must equal perms");
  if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "jaccard_threshold must lie in (0, 1]");
  }
}

std::uint64_t shingle_hash(std::span<const Token> window) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (const auto& t : window) {
    h = hash_combine(h, static_cast<std::uint64_t>(t.kind));
    h = hash_combine(h, fnv1a64(t.text));
  }
  return h;
}

std::vector<std::uint64_t> shingle_set(std::span<const Token> tokens, std::size_t shingle_size) {
  std::vector<std::uint64_t> out;
  if (shingle_size == 0 || tokens.size() < shingle_size) return out;
  out.reserve(tokens.size() - shingle_size + 1);
  for (std::size_t i = 0; i + shingle_size <= tokens.size(); ++i) {
    out.push_back(shingle_hash(tokens.subspan(i, shingle_size)));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MinHashSignature signature_from_hashes(std::span<const std::uint64_t> shingle_hashes, std::size_t perms,
                                       std::uint64_t perm_seed, std::size_t shingle_size) {
  MinHashSignature sig;
  sig.perm_seed = perm_seed;
  sig.shingle_size = shingle_size;
  sig.values.assign(perms, std::numeric_limits<std::uint64_t>::max());
  // hash_p(x) = mix64(x ^ salt_p): a keyed bijection per permutation.
  std::vector<std::uint64_t> salts(perms);
  for (std::size_t p = 0; p < perms; ++p) salts[p] = hash_combine(perm_seed, p);
  for (auto x : shingle_hashes) {
    for (std::size_t p = 0; p < perms; ++p) {
      sig.values[p] = std::min(sig.values[p], mix64(x ^ salts[p]));
    }
  }
  return sig;
}

MinHashSignature shingle_signature(std::span<const Token> tokens, const DedupConfig& cfg, std::uint64_t perm_seed) {
  if (tokens.size() < cfg.shingle_size || cfg.shingle_size == 0) {
    throw Error(ErrorCode::kTooShort, "need at least " + std::to_string(cfg.shingle_size) + " tokens, got " +
                                          std::to_string(tokens.size()));
  }
  const auto hashes = shingle_set(tokens, cfg.shingle_size);
  return signature_from_hashes(hashes, cfg.perms, perm_seed, cfg.shingle_size);
}

double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
  require_compatible(a, b);
  std::size_t same = 0;
  for (std::size_t p = 0; p < a.values.size(); ++p) same += a.values[p] == b.values[p];
  return static_cast<double>(same) / static_cast<double>(a.values.size());
}

std::vector<std::pair<std::size_t, std::size_t>> lsh_candidates(std::span<const MinHashSignature> signatures,
                                                                const DedupConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (signatures.empty()) return pairs;
  for (const auto& s : signatures) {
    if (s.values.size() != cfg.perms || s.shingle_size != cfg.shingle_size ||
        s.perm_seed != signatures.front().perm_seed) {
      throw Error(ErrorCode::kIncompatibleSignatures, "signature does not match the dedup configuration");
    }
  }
  for (std::size_t band = 0; band < cfg.bands; ++band) {
    std::unordered_map<std::vector<std::uint64_t>, std::vector<std::size_t>, BandKeyHash> buckets;
    for (std::size_t i = 0; i < signatures.size(); ++i) {
      const auto first = signatures[i].values.begin() + static_cast<std::ptrdiff_t>(band * cfg.rows);
      buckets[std::vector<std::uint64_t>(first, first + static_cast<std::ptrdiff_t>(cfg.rows))].push_back(i);
    }
    for (const auto& [key, members] : buckets) {
      for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) pairs.emplace_back(members[a], members[b]);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

DedupResult dedup_pool(std::span<const CodeSnippet> snippets, const DedupConfig& cfg) {
  cfg.validate();
  DedupResult result;
  const std::size_t n = snippets.size();
  if (n == 0) return result;

  std::vector<std::vector<MinHashSignature>> sigs(cfg.lsh_rounds);
  std::set<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t round = 0; round < cfg.lsh_rounds; ++round) {
    const std::uint64_t seed = cfg.round_seed(round);
    auto& round_sigs = sigs[round];
    round_sigs.reserve(n);
    for (const auto& s : snippets) round_sigs.push_back(shingle_signature(s.tokens, cfg, seed));
    for (auto p : lsh_candidates(round_sigs, cfg)) candidates.insert(p);
  }

  // Verified duplicate edges with the round-averaged estimate.
  std::vector<std::vector<std::pair<std::size_t, double>>> edges(n);
  for (auto [i, j] : candidates) {
    double est = 0.0;
    for (std::size_t round = 0; round < cfg.lsh_rounds; ++round) est += estimate_jaccard(sigs[round][i], sigs[round][j]);
    est /= static_cast<double>(cfg.lsh_rounds);
    if (est >= cfg.jaccard_threshold) {
      edges[i].emplace_back(j, est);
      edges[j].emplace_back(i, est);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return snippets[a].id < snippets[b].id; });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

  std::vector<bool> kept(n, false);
  for (std::size_t idx : order) {
    std::size_t best = n;
    double best_est = 0.0;
    for (auto [other, est] : edges[idx]) {
      if (!kept[other] || rank[other] > rank[idx]) continue;
      if (best == n || rank[other] < rank[best]) {
        best = other;
        best_est = est;
      }
    }
    if (best == n) {
      kept[idx] = true;
      result.kept.push_back(snippets[idx]);
    } else {
      result.removed.push_back({snippets[idx].id, snippets[best].id, best_est});
    }
  }
  return result;
}

ValidityReport HeuristicValidator::validate(const CodeSnippet& s, const std::set<std::string>& blocklist) const {
  ValidityReport report;
  const LexResult lex = lex_code(s.source_text);
  const auto& toks = lex.tokens;

  bool delimiters_ok = true;
  std::vector<char> stack;
  for (const auto& t : toks) {
    if (t.kind != TokenKind::kDelimiter || t.text.size() != 1) continue;
    const char c = t.text[0];
    if (c == '(' || c == '[' || c == '{') {
      stack.push_back(c);
    } else if (c == ')' || c == ']' || c == '}') {
      const char open = c == ')' ? '(' : (c == ']' ? '[' : '{');
      if (stack.empty() || stack.back() != open) {
        delimiters_ok = false;
        break;
      }
      stack.pop_back();
    }
  }
  delimiters_ok = delimiters_ok && stack.empty();
  const bool indentation_ok = !lex.diagnostics.inconsistent_dedent && !lex.diagnostics.mixed_indentation;

  // Locate "def name ( ... ) [-> ...] :" and the body that follows.
  bool header_ok = false;
  std::size_t body_begin = 0;
  std::size_t body_end = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (!is_ident(toks[i], "def")) continue;
    if (i + 2 >= toks.size() || toks[i + 1].kind != TokenKind::kIdentifier || !is_delim(toks[i + 2], "(")) break;
    std::size_t j = i + 2;
    int depth = 0;
    for (; j < toks.size(); ++j) {
      if (toks[j].kind != TokenKind::kDelimiter) continue;
      if (toks[j].text == "(" || toks[j].text == "[" || toks[j].text == "{") ++depth;
      if (toks[j].text == ")" || toks[j].text == "]" || toks[j].text == "}") {
        if (--depth == 0) break;
      }
    }
    if (j >= toks.size()) break;
    // Skip an optional return annotation up to the colon at depth 0.
    std::size_t k = j + 1;
    depth = 0;
    for (; k < toks.size(); ++k) {
      if (toks[k].kind == TokenKind::kIndent || toks[k].kind == TokenKind::kDedent) break;
      if (toks[k].kind == TokenKind::kDelimiter) {
        if (toks[k].text == "(" || toks[k].text == "[" || toks[k].text == "{") ++depth;
        if (toks[k].text == ")" || toks[k].text == "]" || toks[k].text == "}") --depth;
        if (depth == 0 && toks[k].text == ":") break;
      }
    }
    if (k >= toks.size() || !is_delim(toks[k], ":")) break;
    if (k + 1 < toks.size() && toks[k + 1].kind == TokenKind::kIndent) {
      body_begin = k + 2;
      int level = 1;
      std::size_t e = body_begin;
      for (; e < toks.size(); ++e) {
        if (toks[e].kind == TokenKind::kIndent) ++level;
        if (toks[e].kind == TokenKind::kDedent && --level == 0) break;
      }
      body_end = e;
    } else {
      body_begin = k + 1;
      body_end = toks.size();
    }
    header_ok = body_end > body_begin;
    break;
  }

  report.syntax_ok = delimiters_ok && indentation_ok && !lex.diagnostics.unterminated_string && header_ok;
  if (header_ok) {
    report.has_docstring = toks[body_begin].kind == TokenKind::kString;
    for (std::size_t i = body_begin; i < body_end; ++i) {
      if (is_ident(toks[i], "return")) {
        report.has_return = true;
        break;
      }
    }
  }

  auto note_module = [&](const std::string& name) {
    if (blocklist.count(name) &&
        std::find(report.blocked_imports.begin(), report.blocked_imports.end(), name) == report.blocked_imports.end()) {
      report.blocked_imports.push_back(name);
    }
  };
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (is_ident(toks[i], "from")) {
      // from pkg.mod import x  (relative imports name local modules)
      std::size_t j = i + 1;
      if (j < toks.size() && toks[j].kind == TokenKind::kIdentifier && toks[j].text != "import") {
        const std::string top = toks[j].text;
        ++j;
        while (j + 1 < toks.size() && is_delim(toks[j], ".") && toks[j + 1].kind == TokenKind::kIdentifier) j += 2;
        if (j < toks.size() && is_ident(toks[j], "import")) {
          note_module(top);
          i = j;
        }
      }
    } else if (is_ident(toks[i], "import")) {
      std::size_t j = i + 1;
      while (j < toks.size() && toks[j].kind == TokenKind::kIdentifier) {
        note_module(toks[j].text);
        ++j;
        while (j + 1 < toks.size() && is_delim(toks[j], ".") && toks[j + 1].kind == TokenKind::kIdentifier) j += 2;
        if (j + 1 < toks.size() && is_ident(toks[j], "as")) j += 2;
        if (j < toks.size() && is_delim(toks[j], ",")) {
          ++j;
        } else {
          break;
        }
      }
      i = j > i ? j - 1 : i;
    }
  }
  return report;
}

ValidityReport validate_function(const CodeSnippet& s, const std::set<std::string>& blocklist) {
  return HeuristicValidator{}.validate(s, blocklist);
}

DecontamResult decontaminate(std::span<const CodeSnippet> snippets, std::span<const std::string> benchmark_corpus,
                             std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "n-gram width must be >= 1");
  std::unordered_set<std::string> grams;
  for (const auto& text : benchmark_corpus) {
    const auto toks = tokenize_code(text);
    for (std::size_t i = 0; i + n <= toks.size(); ++i) grams.insert(ngram_key(std::span(toks).subspan(i, n)));
  }
  DecontamResult result;
  for (const auto& s : snippets) {
    bool hit = false;
    for (std::size_t i = 0; !hit && i + n <= s.tokens.size(); ++i) {
      hit = grams.count(ngram_key(std::span(s.tokens).subspan(i, n))) > 0;
    }
    if (hit) {
      result.removed_ids.push_back(s.id);
    } else {
      result.kept.push_back(s);
    }
  }
  return result;
}

PoolBuildResult build_pool(std::vector<CodeSnippet> snippets, const PoolOptions& opts) {
  opts.dedup.validate();
  PoolBuildResult out;

  std::vector<CodeSnippet> stage;
  for (auto& s : snippets) {
    if (s.tokens.size() < opts.dedup.shingle_size) {
      out.removals.push_back({s.id, "validity", json{{"reason", "too_short"}, {"tokens", s.tokens.size()}}});
    } else {
      stage.push_back(std::move(s));
    }
  }

  auto dedup = dedup_pool(stage, opts.dedup);
  for (const auto& r : dedup.removed) {
    out.removals.push_back(
        {r.removed_id, "dedup", json{{"kept_id", r.kept_id}, {"estimated_jaccard", r.estimated_jaccard}}});
  }

  stage.clear();
  for (auto& s : dedup.kept) {
    const auto report = opts.validator->validate(s, opts.blocklist);
    if (report.valid()) {
      stage.push_back(std::move(s));
      continue;
    }
    out.removals.push_back({s.id, "validity",
                            json{{"has_return", report.has_return},
                                 {"syntax_ok", report.syntax_ok},
                                 {"has_docstring", report.has_docstring},
                                 {"blocked_imports", report.blocked_imports}}});
  }

  if (opts.classifier) {
    std::vector<CodeSnippet> passed;
    for (auto& s : stage) {
      if (opts.classifier(s)) {
        passed.push_back(std::move(s));
      } else {
        out.removals.push_back({s.id, "quality", json::object()});
      }
    }
    stage = std::move(passed);
  }

  auto decontam = decontaminate(stage, opts.benchmark_corpus, opts.decontam_ngram);
  for (const auto& id : decontam.removed_ids) {
    out.removals.push_back({id, "decontam", json{{"ngram", opts.decontam_ngram}}});
  }
  out.pool = std::move(decontam.kept);
  return out;
}

json snippet_to_json(const CodeSnippet& s) {
  json j{{"id", s.id}, {"text", s.source_text}, {"language", s.language_tag}};
  if (s.category) j["category"] = *s.category;
  return j;
}

CodeSnippet snippet_from_json(const json& record) {
  if (!record.is_object() || !record.contains("text") || !record["text"].is_string()) {
    throw Error(ErrorCode::kFormatError, "snippet record needs a string 'text' field");
  }
  auto s = make_snippet(record["text"].get<std::string>(), record.value("language", std::string("python")));
  if (record.contains("category") && record["category"].is_number_integer()) {
    const int c = record["category"].get<int>();
    if (c < 0 || c > 9) throw Error(ErrorCode::kFormatError, "category must be in 0..9");
    s.category = c;
  }
  return s;
}

json removal_to_json(const RemovalRecord& r) { return json{{"id", r.id}, {"stage", r.stage}, {"detail", r.detail}}; }

}  // namespace selfdistill::pool
