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
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ensemble/broker.hpp"
#include "ensemble/dag.hpp"
#include "ensemble/envelope.hpp"
#include "ensemble/hierarchy.hpp"
#include "ensemble/sampler.hpp"
#include "ensemble/spec.hpp"

namespace ensemble {

class BrokerClient;

inline constexpr const char* kProvenanceFile = "provenance.json";
inline constexpr const char* kSamplesFile = "samples.csv";

/// Everything a worker needs to run tasks of one study, as recorded in the
/// study directory at enqueue time.
struct StudyContext {
  std::string study_id;
  std::filesystem::path root;  // <workspace_root>/<study_id>
  WorkflowSpec spec;
  std::filesystem::path spec_root;
  ExpandedDag dag;
  SampleSet samples;

  std::uint64_t n() const { return samples.n(); }
};

/// Reads provenance.json and samples.csv under `study_root`. kFile.
std::shared_ptr<const StudyContext> load_study(const std::filesystem::path& study_root);

/// Thread-safe cache keyed by study root.
class StudyCache {
 public:
  std::shared_ptr<const StudyContext> get(const std::filesystem::path& study_root);

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<const StudyContext>> cache_;
};

/// The envelope that starts a node: a root generation task for
/// sample-scoped nodes, a step_once task otherwise.
TaskEnvelope node_root_envelope(const StudyContext& ctx, const StepInstance& node);

/// A node is complete when all of its samples succeeded (sample-scoped) or
/// its single task succeeded (once).
bool node_complete(const StudyContext& ctx, const StepInstance& node, const NodeProgress& progress);

std::set<std::string> completed_nodes(const StudyContext& ctx,
                                      const std::map<std::string, NodeProgress>& nodes);

struct EnqueueOptions {
  bool dry_run = false;
  std::filesystem::path workspace_root;  // overrides the spec when non-empty
};

struct StudyPlan {
  std::string study_id;
  std::filesystem::path study_root;
  std::size_t messages = 0;  // envelopes posted (0 for a dry run)
  TaskCounts planned;        // generation and real tasks over all nodes
  std::uint64_t once_tasks = 0;
  std::uint64_t samples = 0;
  std::size_t nodes = 0;

  std::uint64_t total_tasks() const { return planned.total() + once_tasks; }
};

/// Writes the study directory (provenance.json, samples.csv) and posts the
/// root envelope of every DAG root. `broker` may be null for a dry run.
StudyPlan enqueue_study(const LoadedSpec& loaded, BrokerClient* broker, const EnqueueOptions& options);

/// Workspace root in effect: explicit flag, then ENSEMBLE_WORKSPACE, then
/// the spec, made absolute against the current directory.
std::filesystem::path resolve_workspace_root(const std::filesystem::path& flag,
                                             const WorkflowSpec& spec);

}  // namespace ensemble
