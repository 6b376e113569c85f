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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensemble/substitute.hpp"

namespace ensemble {

enum class RunMode { kPerSample, kOncePerParameterSet };

std::string_view run_mode_name(RunMode mode);

struct Dependency {
  std::string step;
  bool all_instances = false;  // written `step_*`: wait for every instance

  bool operator==(const Dependency&) const = default;
};

struct StepDefinition {
  std::string name;
  std::string command;
  std::string shell = "/bin/sh";
  std::vector<Dependency> depends;
  RunMode run_mode = RunMode::kPerSample;
  int max_retries = 3;

  bool operator==(const StepDefinition&) const = default;

  /// True when the command references $(SAMPLE_ID) or $(SAMPLE.<col>).
  bool references_samples() const;
};

struct Parameter {
  std::string name;
  std::vector<std::string> values;
  std::string label_template;  // contains exactly one "%%"

  bool operator==(const Parameter&) const = default;
};

/// Parameters zip column-wise: combination i takes values[i] of every entry.
struct ParameterBlock {
  std::vector<Parameter> entries;

  bool operator==(const ParameterBlock&) const = default;

  /// K. A block without entries has one (empty) combination.
  std::size_t combinations() const;
  bool empty() const { return entries.empty(); }
  const Parameter* find(std::string_view name) const;

  /// Per-parameter labels of combination i joined with '.', e.g.
  /// "ITER.2.RES.fine". Values are sanitized ('/' and whitespace → '_').
  std::string label(std::size_t index) const;

  /// {NAME: value, NAME.label: label} for combination i.
  Bindings bindings(std::size_t index) const;
};

enum class SampleSourceKind { kUniform, kGrid, kFile };

std::string_view sample_source_kind_name(SampleSourceKind kind);

struct SampleSource {
  SampleSourceKind kind = SampleSourceKind::kUniform;
  std::uint64_t seed = 0;
  // One entry broadcasts to every column; otherwise one entry per column.
  std::vector<double> min{0.0};
  std::vector<double> max{1.0};
  std::string path;  // kFile; relative paths resolve against the spec's directory

  bool operator==(const SampleSource&) const = default;
};

struct SampleConfig {
  std::uint64_t count = 0;
  std::vector<std::string> column_names;
  SampleSource source;
  int branching_factor = 25;

  bool operator==(const SampleConfig&) const = default;
};

inline constexpr std::size_t kDefaultMessageLimit = 64u * 1024 * 1024;

struct RunConfig {
  std::string broker_endpoint = "local:";
  int task_priority_real = 10;
  int task_priority_generation = 1;
  std::string workspace_root = "ensemble_workspace";
  std::uint64_t message_size_limit = kDefaultMessageLimit;

  bool operator==(const RunConfig&) const = default;
};

struct WorkflowSpec {
  std::string description;
  std::vector<std::pair<std::string, std::string>> env_vars;
  std::vector<StepDefinition> steps;
  ParameterBlock parameters;
  SampleConfig sample_config;
  RunConfig run_config;

  bool operator==(const WorkflowSpec&) const = default;

  const StepDefinition* find_step(std::string_view name) const;
  Bindings env_bindings() const;
};

/// Parses and validates a workflow document. Throws Error(kSyntax) for
/// malformed text and Error(kValidation) for invariant violations (cycles,
/// duplicate or dangling step names, ragged parameters, unbindable tokens).
WorkflowSpec parse_spec(std::string_view text);

/// Serializes to the canonical form: every field written explicitly, strings
/// double-quoted, 2-space indentation. parse_spec(to_canonical_text(s)) == s.
std::string to_canonical_text(const WorkflowSpec& spec);

/// Sets (or adds) env variables, e.g. from `run --var ITER=2`.
void apply_env_overrides(WorkflowSpec& spec,
                         const std::vector<std::pair<std::string, std::string>>& vars);

struct LoadedSpec {
  WorkflowSpec spec;
  std::filesystem::path spec_root;  // absolute directory of the file
  std::filesystem::path spec_path;
};

/// Reads and parses a spec file; Error(kFile) when it cannot be read.
LoadedSpec load_spec_file(const std::filesystem::path& path);

/// Reads a whole file; Error(kFile) naming the path on failure.
std::string read_file(const std::filesystem::path& path);

}  // namespace ensemble
