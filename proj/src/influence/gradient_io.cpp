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

#include "selfdistill/gradient_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace selfdistill::influence {
namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t off) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return static_cast<T>(v);
}

std::string encode_row(std::span<const double> row) {
  std::string out;
  out.reserve(row.size() * 4);
  for (double x : row) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "gradient rows must be finite");
    put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

std::string read_exact(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::string buf(n, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error(ErrorCode::kFormatError, path.string() + ": truncated");
  return buf;
}

}  // namespace

std::string encode_header(const GradientFileHeader& h) {
  std::string out = "GRDV";
  put_le<std::uint32_t>(out, h.version);
  put_le<std::uint8_t>(out, h.dtype);
  put_le<std::uint64_t>(out, h.dim);
  put_le<std::uint64_t>(out, h.count);
  put_le<std::uint8_t>(out, h.projected ? 1 : 0);
  put_le<std::uint64_t>(out, h.k);
  put_le<std::uint64_t>(out, h.seed);
  return out;
}

GradientFileHeader decode_header(std::string_view bytes) {
  if (bytes.size() < kGradientHeaderBytes) throw Error(ErrorCode::kFormatError, "gradient header truncated");
  if (bytes.substr(0, 4) != "GRDV") throw Error(ErrorCode::kFormatError, "bad gradient file magic");
  GradientFileHeader h;
  h.version = get_le<std::uint32_t>(bytes, 4);
  h.dtype = get_le<std::uint8_t>(bytes, 8);
  h.dim = get_le<std::uint64_t>(bytes, 9);
  h.count = get_le<std::uint64_t>(bytes, 17);
  const auto applied = get_le<std::uint8_t>(bytes, 25);
  h.k = get_le<std::uint64_t>(bytes, 26);
  h.seed = get_le<std::uint64_t>(bytes, 34);
  if (h.version != kGradientFormatVersion) {
    throw Error(ErrorCode::kFormatError, "unsupported gradient format version " + std::to_string(h.version));
  }
  if (h.dtype != 0) throw Error(ErrorCode::kFormatError, "unsupported gradient dtype " + std::to_string(h.dtype));
  if (applied > 1) throw Error(ErrorCode::kFormatError, "bad projection flag");
  h.projected = applied == 1;
  if (h.dim == 0 || (h.projected && (h.k == 0 || h.k > h.dim))) {
    throw Error(ErrorCode::kFormatError, "inconsistent gradient dimensions");
  }
  return h;
}

std::filesystem::path index_path(const std::filesystem::path& file) { return file.string() + ".index"; }
std::filesystem::path meta_path(const std::filesystem::path& file) { return file.string() + ".meta.json"; }

GradientFileWriter::GradientFileWriter(const std::filesystem::path& path, GradientFileHeader header)
    : path_(path), header_(header) {
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    const auto existing = decode_header(read_exact(in, kGradientHeaderBytes, path));
    if (existing.dim != header.dim || existing.projected != header.projected || existing.k != header.k ||
        existing.seed != header.seed) {
      throw Error(ErrorCode::kFormatError, path.string() + ": appending rows with a different layout");
    }
    header_ = existing;
    data_.open(path, std::ios::binary | std::ios::in | std::ios::out);
  } else {
    header_.count = 0;
    std::ofstream create(path, std::ios::binary | std::ios::trunc);
    create << encode_header(header_);
    create.close();
    std::ofstream(index_path(path), std::ios::trunc).close();
    data_.open(path, std::ios::binary | std::ios::in | std::ios::out);
  }
  index_.open(index_path(path), std::ios::app);
  if (!data_ || !index_) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  header_.version = kGradientFormatVersion;
}

GradientFileWriter::~GradientFileWriter() {
  try {
    close();
  } catch (...) {
  }
}

void GradientFileWriter::append(const std::string& sample_id, std::span<const double> row) {
  if (closed_) throw Error(ErrorCode::kIoError, "gradient writer is closed");
  if (row.size() != header_.row_length()) {
    throw Error(ErrorCode::kBadDims, "row length " + std::to_string(row.size()) + " != " +
                                         std::to_string(header_.row_length()));
  }
  const std::uint64_t row_bytes = header_.row_length() * 4;
  data_.seekp(static_cast<std::streamoff>(kGradientHeaderBytes + header_.count * row_bytes));
  data_ << encode_row(row);
  data_.flush();
  index_ << json{{"row", header_.count}, {"sample_id", sample_id}}.dump() << '\n';
  index_.flush();
  ++header_.count;
  std::string count;
  put_le<std::uint64_t>(count, header_.count);
  data_.seekp(17);
  data_.write(count.data(), 8);
  data_.flush();
  if (!data_ || !index_) throw Error(ErrorCode::kIoError, "write failed on " + path_.string());
}

void GradientFileWriter::close() {
  if (closed_) return;
  closed_ = true;
  data_.close();
  index_.close();
}

GradientFileReader::GradientFileReader(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  header_ = decode_header(read_exact(in, kGradientHeaderBytes, path));
  const auto need = kGradientHeaderBytes + header_.count * header_.row_length() * 4;
  if (std::filesystem::file_size(path) < need) throw Error(ErrorCode::kFormatError, path.string() + ": truncated rows");

  const auto idx = index_path(path);
  if (!std::filesystem::exists(idx)) throw Error(ErrorCode::kFormatError, idx.string() + ": missing index");
  const auto records = read_jsonl(idx);
  if (records.size() < header_.count) {
    throw Error(ErrorCode::kFormatError, idx.string() + ": index has fewer entries than rows");
  }
  sample_ids_.resize(count());
  for (std::size_t i = 0; i < count(); ++i) {
    const auto& r = records[i];
    if (!r.contains("row") || !r.contains("sample_id") || r["row"].get<std::uint64_t>() != i) {
      throw Error(ErrorCode::kFormatError, idx.string() + ": bad index entry " + std::to_string(i));
    }
    sample_ids_[i] = r["sample_id"].get<std::string>();
  }
  if (std::filesystem::exists(meta_path(path))) {
    try {
      metadata_ = json::parse(read_file(meta_path(path)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormatError, meta_path(path).string() + ": " + e.what());
    }
  }
}

std::vector<double> GradientFileReader::row(std::size_t i) const {
  if (i >= count()) throw Error(ErrorCode::kOutOfRange, "row " + std::to_string(i) + " out of range");
  const std::size_t len = static_cast<std::size_t>(header_.row_length());
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(kGradientHeaderBytes + i * len * 4));
  const auto bytes = read_exact(in, len * 4, path_);
  std::vector<double> out(len);
  for (std::size_t c = 0; c < len; ++c) out[c] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, 4 * c));
  return out;
}

std::optional<std::size_t> GradientFileReader::find(const std::string& sample_id) const {
  for (std::size_t i = 0; i < sample_ids_.size(); ++i) {
    if (sample_ids_[i] == sample_id) return i;
  }
  return std::nullopt;
}

void write_gradient_file(const std::filesystem::path& path, const GradientFileHeader& header,
                         std::span<const std::string> sample_ids, std::span<const std::vector<double>> rows,
                         const std::optional<json>& metadata) {
  if (sample_ids.size() != rows.size()) throw Error(ErrorCode::kInvalidArgument, "one sample id per row required");
  std::filesystem::remove(path);
  std::filesystem::remove(index_path(path));
  GradientFileWriter w(path, header);
  for (std::size_t i = 0; i < rows.size(); ++i) w.append(sample_ids[i], rows[i]);
  w.close();
  if (metadata) write_file_atomic(meta_path(path), metadata->dump(2));
}

ImportedGradientProvider::ImportedGradientProvider(const std::filesystem::path& path) : reader_(path) {
  if (reader_.header().projected) {
    throw Error(ErrorCode::kFormatError, path.string() + ": imported gradients must be unprojected");
  }
}

GradientVector ImportedGradientProvider::gradient(const InstructionSample& sample) const {
  const auto row = reader_.find(sample.sample_id);
  if (!row) throw Error(ErrorCode::kInvalidArgument, "no imported gradient for sample " + sample.sample_id);
  return {sample.sample_id, reader_.row(*row), ProviderTag::kImported};
}

}  // namespace selfdistill::influence
