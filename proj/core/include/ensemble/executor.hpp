// Copyright 2026 The Ensemble Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ensemble/envelope.hpp"
#include "ensemble/study.hpp"

namespace ensemble {

inline constexpr const char* kDoneMarker = ".done";
inline constexpr const char* kScriptFile = "exec.sh";
inline constexpr const char* kStdoutFile = "stdout.log";
inline constexpr const char* kStderrFile = "stderr.log";

struct ExecutionResult {
  std::string task_id;
  std::optional<std::uint64_t> sample;
  int exit_code = 0;
  double wall_time = 0.0;      // child process, seconds
  double overhead_time = 0.0;  // receipt to marker, minus wall_time
  std::filesystem::path workspace;
  std::filesystem::path stdout_path;
  std::filesystem::path stderr_path;
  bool skipped = false;  // a success marker already existed

  bool ok() const { return exit_code == 0; }
};

nlohmann::json execution_result_to_json(const ExecutionResult& r);

struct ExecutorOptions {
  std::string worker_id;
  std::string broker_endpoint;             // exported as ENSEMBLE_BROKER
  std::filesystem::path workspace_root;    // exported as ENSEMBLE_WORKSPACE
  std::filesystem::path exe_path;          // exported as ENSEMBLE_EXE when set
  std::uint64_t output_cap = 16u << 20;    // bytes kept per log
};

/// Digits of n-1, at least one.
int sample_index_width(std::uint64_t n);

/// `<study>/<step>/<label>[/<padded sample>]`.
std::filesystem::path task_workspace(const StudyContext& ctx, const StepInstance& node,
                                     std::optional<std::uint64_t> sample);

/// Runs one sample (real) or the single task of a once node. Throws
/// kWorkspace and kSpawn; a nonzero exit is a result, not an error.
ExecutionResult execute_task(const TaskEnvelope& envelope, const StudyContext& ctx,
                             const ExecutorOptions& options,
                             std::chrono::steady_clock::time_point received);

/// Runs the samples of a bundle serially, one workspace each. Every sample
/// is attempted; the caller treats any failure as a failed bundle.
std::vector<ExecutionResult> execute_bundle(const TaskEnvelope& bundle, const StudyContext& ctx,
                                            const ExecutorOptions& options,
                                            std::chrono::steady_clock::time_point received);

/// Reads a marker's exit code, or nullopt when absent or unreadable.
std::optional<int> read_done_marker(const std::filesystem::path& workspace);

}  // namespace ensemble
