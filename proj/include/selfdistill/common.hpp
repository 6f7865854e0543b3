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
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace selfdistill {

using json = nlohmann::json;

enum class ErrorCode {
  kInvalidArgument,
  kInvalidUtf8,
  kTooShort,
  kIncompatibleSignatures,
  kDimensionMismatch,
  kBadCategorySet,
  kMissingPlaceholder,
  kMalformedCompletion,
  kEndpointUnavailable,
  kAllSlotsFailed,
  kWrongArity,
  kOutOfRange,
  kUnparseable,
  kSingularSystem,
  kNoValidCandidates,
  kBadDims,
  kEmptyCorpus,
  kEmpty,
  kMixedProjections,
  kZeroVector,
  kFormatError,
  kBadSchedule,
  kStageFailure,
  kCorruptManifest,
  kStateLocked,
  kBadTargets,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// splitmix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ (mix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Portable seeded generator. std::mt19937_64 output is fixed by the standard;
// the distributions below avoid the implementation-defined std:: ones so that
// draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller (one value per call, no caching).
  double normal();

 private:
  std::mt19937_64 engine_;
};

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

bool is_valid_utf8(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Newline-delimited JSON records. Blank lines are skipped.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::vector<json> parse_jsonl(std::string_view text);
std::string to_jsonl(const std::vector<json>& records);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

std::string trim(std::string_view s);

}  // namespace selfdistill
