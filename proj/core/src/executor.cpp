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

#include "ensemble/executor.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "ensemble/error.hpp"
#include "ensemble/ids.hpp"
#include "ensemble/sampler.hpp"
#include "ensemble/substitute.hpp"

extern char** environ;

namespace ensemble {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

json execution_result_to_json(const ExecutionResult& r) {
  return {{"task_id", r.task_id},
          {"sample", r.sample ? json(*r.sample) : json()},
          {"exit_code", r.exit_code},
          {"wall_time", r.wall_time},
          {"overhead_time", r.overhead_time},
          {"workspace", r.workspace.string()},
          {"stdout", r.stdout_path.string()},
          {"stderr", r.stderr_path.string()}};
}

int sample_index_width(std::uint64_t n) {
  std::uint64_t last = n > 0 ? n - 1 : 0;
  int digits = 1;
  while (last >= 10) {
    last /= 10;
    ++digits;
  }
  return digits;
}

fs::path task_workspace(const StudyContext& ctx, const StepInstance& node, std::optional<std::uint64_t> sample) {
  fs::path p = ctx.root / node.workspace_path;
  if (sample) p /= fmt::format("{:0{}}", *sample, sample_index_width(ctx.n()));
  return p;
}

std::optional<int> read_done_marker(const fs::path& workspace) {
  std::ifstream in(workspace / kDoneMarker);
  int code = 0;
  if (!(in >> code)) return std::nullopt;
  return code;
}

namespace {

class EnvBlock {
 public:
  void set(const std::string& name, const std::string& value) { vars_[name] = value; }

  std::vector<std::string> build() const {
    std::map<std::string, std::string> merged;
    for (char** e = environ; e && *e; ++e) {
      std::string_view kv(*e);
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      merged[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
    }
    for (const auto& [k, v] : vars_) merged[k] = v;
    std::vector<std::string> out;
    out.reserve(merged.size());
    for (const auto& [k, v] : merged) out.push_back(k + "=" + v);
    return out;
  }

 private:
  std::map<std::string, std::string> vars_;
};

void write_file(const fs::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::kWorkspace, fmt::format("cannot write {}", path.string()));
}

void write_marker(const fs::path& workspace, const ExecutionResult& r) {
  const fs::path tmp = workspace / fmt::format("{}.{}.tmp", kDoneMarker, random_id().substr(0, 8));
  write_file(tmp, fmt::format("{}\n{}\n", r.exit_code, canonical_json(execution_result_to_json(r))));
  std::error_code ec;
  fs::rename(tmp, workspace / kDoneMarker, ec);
  if (ec) throw Error(ErrorCode::kWorkspace, fmt::format("cannot publish marker in {}: {}", workspace.string(), ec.message()));
}

void cap_file(const fs::path& path, std::uint64_t cap) {
  std::error_code ec;
  auto size = fs::file_size(path, ec);
  if (!ec && size > cap) fs::resize_file(path, cap, ec);
}

int run_child(const std::string& shell, const fs::path& workspace, const std::vector<std::string>& env) {
  if (::access(shell.c_str(), X_OK) != 0) {
    throw Error(ErrorCode::kSpawn, fmt::format("shell {} is not executable: {}", shell, std::strerror(errno)));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  const std::string ws = workspace.string();
  const std::string out = (workspace / kStdoutFile).string();
  const std::string err = (workspace / kStderrFile).string();
  posix_spawn_file_actions_addchdir_np(&actions, ws.c_str());
  posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 1, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, 2, err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);

  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  sigset_t defaults;
  sigemptyset(&defaults);
  sigaddset(&defaults, SIGTERM);
  sigaddset(&defaults, SIGINT);
  sigaddset(&defaults, SIGPIPE);
  sigset_t none;
  sigemptyset(&none);
  posix_spawnattr_setsigdefault(&attr, &defaults);
  posix_spawnattr_setsigmask(&attr, &none);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSIGDEF | POSIX_SPAWN_SETSIGMASK);

  std::string script = kScriptFile;
  std::vector<char*> argv{const_cast<char*>(shell.c_str()), script.data(), nullptr};
  std::vector<char*> envp;
  envp.reserve(env.size() + 1);
  for (const std::string& kv : env) envp.push_back(const_cast<char*>(kv.c_str()));
  envp.push_back(nullptr);

  pid_t pid = 0;
  int rc = ::posix_spawn(&pid, shell.c_str(), &actions, &attr, argv.data(), envp.data());
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw Error(ErrorCode::kSpawn, fmt::format("cannot start {}: {}", shell, std::strerror(rc)));

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw Error(ErrorCode::kSpawn, fmt::format("waitpid: {}", std::strerror(errno)));
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return 1;
}

ExecutionResult run_one(const TaskEnvelope& envelope, const StudyContext& ctx, const StepInstance& node,
                        std::optional<std::uint64_t> sample, const ExecutorOptions& options,
                        Clock::time_point received) {
  ExecutionResult r;
  r.task_id = envelope.task_id;
  r.sample = sample;
  r.workspace = task_workspace(ctx, node, sample);
  r.stdout_path = r.workspace / kStdoutFile;
  r.stderr_path = r.workspace / kStderrFile;

  if (auto code = read_done_marker(r.workspace); code && *code == 0) {
    r.skipped = true;
    return r;
  }

  std::error_code ec;
  fs::create_directories(r.workspace, ec);
  if (ec) throw Error(ErrorCode::kWorkspace, fmt::format("cannot create {}: {}", r.workspace.string(), ec.message()));

  const StepDefinition* step = ctx.spec.find_step(node.step);
  if (!step) throw Error(ErrorCode::kExpansion, fmt::format("unknown step {}", node.step));

  Bindings bindings = ctx.spec.env_bindings();
  bindings["WORKSPACE"] = r.workspace.string();
  bindings["SPEC_ROOT"] = ctx.spec_root.string();
  if (sample) {
    for (auto& [k, v] : sample_bindings(ctx.samples, *sample)) bindings[k] = v;
  }
  for (const auto& [token, path] : node.dependency_workspaces) bindings[token] = (ctx.root / path).string();
  const std::string command = substitute(node.resolved_command, bindings, node.node_id);
  write_file(r.workspace / kScriptFile, fmt::format("#!{}\n{}\n", step->shell, command));

  EnvBlock env;
  for (const auto& [k, v] : ctx.spec.env_vars) env.set(k, v);
  env.set("ENSEMBLE_BROKER", options.broker_endpoint);
  env.set("ENSEMBLE_WORKSPACE", options.workspace_root.empty() ? ctx.root.parent_path().string()
                                                               : options.workspace_root.string());
  env.set("ENSEMBLE_STUDY_ID", ctx.study_id);
  if (!options.exe_path.empty()) env.set("ENSEMBLE_EXE", options.exe_path.string());

  const auto start = Clock::now();
  r.exit_code = run_child(step->shell, r.workspace, env.build());
  const auto end = Clock::now();
  r.wall_time = std::chrono::duration<double>(end - start).count();
  cap_file(r.stdout_path, options.output_cap);
  cap_file(r.stderr_path, options.output_cap);
  r.overhead_time = std::max(0.0, std::chrono::duration<double>(Clock::now() - received).count() - r.wall_time);
  if (r.ok()) write_marker(r.workspace, r);
  return r;
}

}  // namespace

ExecutionResult execute_task(const TaskEnvelope& envelope, const StudyContext& ctx,
                             const ExecutorOptions& options, Clock::time_point received) {
  const StepInstance& node = ctx.dag.node(envelope.node_id);
  switch (envelope.kind) {
    case TaskKind::kReal:
      if (!envelope.sample) {
        throw Error(ErrorCode::kCorruptEnvelope, fmt::format("real task {} has no sample", envelope.task_id));
      }
      if (*envelope.sample >= ctx.n()) {
        throw Error(ErrorCode::kIndex, fmt::format("sample {} out of range [0, {})", *envelope.sample, ctx.n()));
      }
      return run_one(envelope, ctx, node, envelope.sample, options, received);
    case TaskKind::kStepOnce:
      return run_one(envelope, ctx, node, std::nullopt, options, received);
    case TaskKind::kGeneration:
      break;
  }
  throw Error(ErrorCode::kCorruptEnvelope, fmt::format("task {} is not executable", envelope.task_id));
}

std::vector<ExecutionResult> execute_bundle(const TaskEnvelope& bundle, const StudyContext& ctx,
                                            const ExecutorOptions& options, Clock::time_point received) {
  if (!bundle.is_bundle()) return {execute_task(bundle, ctx, options, received)};
  if (bundle.range->hi > ctx.n()) {
    throw Error(ErrorCode::kIndex, fmt::format("bundle [{}, {}) exceeds {} samples", bundle.range->lo,
                                               bundle.range->hi, ctx.n()));
  }
  const StepInstance& node = ctx.dag.node(bundle.node_id);
  std::vector<ExecutionResult> results;
  results.reserve(bundle.range->width());
  for (std::uint64_t s = bundle.range->lo; s < bundle.range->hi; ++s) {
    results.push_back(run_one(bundle, ctx, node, s, options, received));
  }
  return results;
}

}  // namespace ensemble
