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

// GRDV gradient files.
//
//   offset  size  field
//   0       4     magic "GRDV"
//   4       4     version (u32, = 1)
//   8       1     dtype (u8, 0 = f32)
//   9       8     dim (u64): length of the original gradient
//   17      8     count (u64): number of rows
//   25      1     projection.applied (u8)
//   26      8     projection.k (u64)
//   34      8     projection.seed (u64)
//   42      ...   count rows of little-endian f32, row-major
//
// Rows have length k when projection.applied is set and dim otherwise.
// Sidecars: "<file>.index" holds one {"row", "sample_id"} record per line;
// "<file>.meta.json" is optional free-form provenance (adapter rank, alpha,
// target modules, flatten order).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfdistill/common.hpp"
#include "selfdistill/influence.hpp"

namespace selfdistill::influence {

inline constexpr std::uint32_t kGradientFormatVersion = 1;
inline constexpr std::size_t kGradientHeaderBytes = 42;

struct GradientFileHeader {
  std::uint32_t version = kGradientFormatVersion;
  std::uint8_t dtype = 0;
  std::uint64_t dim = 0;
  std::uint64_t count = 0;
  bool projected = false;
  std::uint64_t k = 0;
  std::uint64_t seed = 0;

  std::uint64_t row_length() const { return projected ? k : dim; }
};

std::string encode_header(const GradientFileHeader& h);
// Throws FormatError on bad magic, version, dtype or size.
GradientFileHeader decode_header(std::string_view bytes);

std::filesystem::path index_path(const std::filesystem::path& file);
std::filesystem::path meta_path(const std::filesystem::path& file);

// Single appender. Rows are written before the header count is bumped, so a
// concurrent reader only ever sees complete rows.
class GradientFileWriter {
 public:
  GradientFileWriter(const std::filesystem::path& path, GradientFileHeader header);
  ~GradientFileWriter();
  GradientFileWriter(const GradientFileWriter&) = delete;
  GradientFileWriter& operator=(const GradientFileWriter&) = delete;

  void append(const std::string& sample_id, std::span<const double> row);
  void close();
  std::uint64_t count() const { return header_.count; }

 private:
  std::filesystem::path path_;
  GradientFileHeader header_;
  std::fstream data_;
  std::ofstream index_;
  bool closed_ = false;
};

class GradientFileReader {
 public:
  explicit GradientFileReader(const std::filesystem::path& path);

  const GradientFileHeader& header() const { return header_; }
  std::size_t count() const { return static_cast<std::size_t>(header_.count); }
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }
  std::optional<json> metadata() const { return metadata_; }

  std::vector<double> row(std::size_t i) const;
  std::optional<std::size_t> find(const std::string& sample_id) const;

 private:
  std::filesystem::path path_;
  GradientFileHeader header_;
  std::vector<std::string> sample_ids_;
  std::optional<json> metadata_;
};

void write_gradient_file(const std::filesystem::path& path, const GradientFileHeader& header,
                         std::span<const std::string> sample_ids, std::span<const std::vector<double>> rows,
                         const std::optional<json>& metadata = std::nullopt);

// Gradients of an unprojected file, looked up by sample id.
class ImportedGradientProvider final : public GradientProvider {
 public:
  explicit ImportedGradientProvider(const std::filesystem::path& path);
  std::size_t dimension() const override { return static_cast<std::size_t>(reader_.header().dim); }
  GradientVector gradient(const InstructionSample& sample) const override;

 private:
  GradientFileReader reader_;
};

}  // namespace selfdistill::influence
