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

#include "state.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace selfdistill::bootstrap {
namespace {

constexpr std::array<std::string_view, kStageCount> kStageNames = {"pool",  "sample",    "synthesize",
                                                                    "score", "influence", "emit"};

void verify_file(const std::filesystem::path& path, const std::string& expected, const std::string& what) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kCorruptManifest, what + ": missing " + path.string());
  }
  if (sha256_file(path) != expected) throw Error(ErrorCode::kCorruptManifest, what + ": digest mismatch for " + path.string());
}

json load_manifest(const std::filesystem::path& state_dir, const json& ref) {
  const auto path = state_dir / ref.at("manifest").get<std::string>();
  verify_file(path, ref.at("sha256").get<std::string>(), "manifest");
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptManifest, path.string() + ": " + e.what());
  }
  const json artifacts = m.value("artifacts", json::object());
  for (const auto& [name, art] : artifacts.items()) {
    verify_file(state_dir / art.at("path").get<std::string>(), art.at("sha256").get<std::string>(), "artifact " + name);
  }
  return m;
}

}  // namespace

std::string_view to_string(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage stage_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown stage " + std::string(name));
}

std::filesystem::path iteration_dir(const std::filesystem::path& state_dir, int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%03d", iteration);
  return state_dir / buf;
}

StateLock::StateLock(const std::filesystem::path& state_dir) {
  std::filesystem::create_directories(state_dir);
  const auto path = state_dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorCode::kStateLocked, state_dir.string() + " is in use by another run");
  }
}

StateLock::~StateLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

namespace detail {

std::string manifest_rel(int iteration) {
  return (std::filesystem::path(iteration_dir("", iteration)) / "manifest.json").generic_string();
}

std::filesystem::path state_file(const std::filesystem::path& state_dir) { return state_dir / "state.json"; }

PipelineState load_state(const std::filesystem::path& state_dir) {
  PipelineState st;
  const auto path = state_file(state_dir);
  if (!std::filesystem::exists(path)) return st;
  json j;
  try {
    j = json::parse(read_file(path));
    st.iteration = j.at("iteration").get<int>();
    st.stage = stage_from_string(j.at("stage").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptManifest, path.string() + ": " + e.what());
  }
  for (const auto& ref : j.value("completed", json::array())) {
    st.manifests.push_back(load_manifest(state_dir, ref));
    st.manifest_digests.push_back(ref.at("sha256").get<std::string>());
  }
  if (j.contains("partial") && !j["partial"].is_null()) {
    st.partial = load_manifest(state_dir, j["partial"]);
    const auto done = st.partial.value("stages_completed", json::array()).size();
    if (done != static_cast<std::size_t>(st.stage)) {
      throw Error(ErrorCode::kCorruptManifest, "stage cursor disagrees with the partial manifest");
    }
  } else if (st.stage != Stage::kPool) {
    throw Error(ErrorCode::kCorruptManifest, "stage cursor past pool without a partial manifest");
  }
  if (static_cast<int>(st.manifests.size()) != st.iteration - 1) {
    throw Error(ErrorCode::kCorruptManifest, "completed manifests do not match the iteration cursor");
  }
  return st;
}

void save_state(const std::filesystem::path& state_dir, const PipelineState& st) {
  json completed = json::array();
  if (st.manifest_digests.size() != st.manifests.size()) {
    throw Error(ErrorCode::kInvalidArgument, "every completed manifest needs a recorded digest");
  }
  for (std::size_t i = 0; i < st.manifests.size(); ++i) {
    const int it = st.manifests[i].at("iteration").get<int>();
    completed.push_back({{"iteration", it}, {"manifest", manifest_rel(it)}, {"sha256", st.manifest_digests[i]}});
  }
  json j{{"iteration", st.iteration}, {"stage", to_string(st.stage)}, {"completed", completed}, {"partial", nullptr}};
  if (!st.partial.empty()) {
    const auto rel = manifest_rel(st.iteration);
    std::filesystem::create_directories((state_dir / rel).parent_path());
    write_file_atomic(state_dir / rel, st.partial.dump(2) + "\n");
    j["partial"] = {{"manifest", rel}, {"sha256", sha256_file(state_dir / rel)}};
  }
  write_file_atomic(state_file(state_dir), j.dump(2) + "\n");
}

}  // namespace detail

PipelineState resume(const std::filesystem::path& state_dir) {
  if (!std::filesystem::exists(state_dir)) return {};
  StateLock lock(state_dir);
  return detail::load_state(state_dir);
}

std::string status_table(const PipelineState& st) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %8s %8s %8s %8s %8s %8s %8s %-9s %s\n", "iter", "quota", "drawn", "slots",
                "failed", "best", "filtered", "emitted", "shortfall", "dataset");
  out << line;
  auto row = [&](const json& m, const std::string& note) {
    const json c = m.value("counts", json::object());
    auto n = [&](const char* k) { return c.contains(k) ? std::to_string(c[k].get<long long>()) : std::string("-"); };
    std::string digest = "-";
    if (m.contains("output_dataset")) digest = m["output_dataset"]["sha256"].get<std::string>().substr(0, 16);
    std::snprintf(line, sizeof line, "%-5d %8s %8s %8s %8s %8s %8s %8s %-9s %s%s\n", m.value("iteration", 0),
                  std::to_string(m.value("quota", 0)).c_str(), n("snippets_drawn").c_str(), n("candidate_slots").c_str(),
                  n("candidates_failed").c_str(), n("best_selected").c_str(), n("influence_filtered").c_str(),
                  n("emitted").c_str(), m.value("quota_shortfall", false) ? "yes" : "no", digest.c_str(), note.c_str());
    out << line;
  };
  for (const auto& m : st.manifests) row(m, "");
  if (!st.partial.empty()) row(st.partial, "  (in progress, next stage: " + std::string(to_string(st.stage)) + ")");
  else out << "next: iteration " << st.iteration << ", stage " << to_string(st.stage) << "\n";
  return out.str();
}

}  // namespace selfdistill::bootstrap
