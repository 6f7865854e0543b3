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

#include "selfdistill/bootstrap.hpp"

namespace selfdistill::bootstrap::detail {

// Relative to the state directory.
std::string manifest_rel(int iteration);

std::filesystem::path state_file(const std::filesystem::path& state_dir);

// resume() without taking the lock.
PipelineState load_state(const std::filesystem::path& state_dir);

// Writes the partial (or final) manifest of the current iteration and the
// state file that points at it.
void save_state(const std::filesystem::path& state_dir, const PipelineState& state);

}  // namespace selfdistill::bootstrap::detail
