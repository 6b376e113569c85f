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

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ensemble/spec.hpp"

namespace ensemble {

/// One (step, parameter combination) node of the expanded graph.
struct StepInstance {
  std::string node_id;  // equals workspace_path
  std::string step;
  std::size_t parameter_index = 0;
  std::string parameter_label;   // empty for unparameterized steps
  std::string resolved_command;  // parameter tokens bound, others intact
  std::string workspace_path;    // "<step>/<label>" or "<step>"
  bool sample_scoped = false;
  /// `<dep>.workspace` token → workspace path relative to the study root.
  std::map<std::string, std::string> dependency_workspaces;

  bool operator==(const StepInstance&) const = default;
};

class ExpandedDag {
 public:
  ExpandedDag() = default;
  ExpandedDag(std::vector<StepInstance> nodes,
              std::vector<std::pair<std::string, std::string>> edges);

  const std::vector<StepInstance>& nodes() const { return nodes_; }
  const std::vector<std::pair<std::string, std::string>>& edges() const { return edges_; }
  const std::vector<std::string>& root_ids() const { return root_ids_; }

  const StepInstance* find(std::string_view node_id) const;
  const StepInstance& node(std::string_view node_id) const;  // throws kExpansion
  const std::vector<std::string>& predecessors(std::string_view node_id) const;
  const std::vector<std::string>& successors(std::string_view node_id) const;

  /// Kahn's algorithm, ties broken by node order. Throws kExpansion on a cycle.
  std::vector<std::string> topological_order() const;

  bool operator==(const ExpandedDag& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  std::vector<StepInstance> nodes_;
  std::vector<std::pair<std::string, std::string>> edges_;
  std::vector<std::string> root_ids_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::vector<std::string>> preds_;
  std::vector<std::vector<std::string>> succs_;
};

/// Expands the compact step graph over the K parameter combinations. A step
/// becomes K nodes when its command references a parameter or it has a plain
/// dependency on such a step; otherwise it is a single node. Plain
/// dependencies connect matching parameter indices, `_*` dependencies
/// connect every instance. Nodes are ordered by step declaration then
/// parameter index.
ExpandedDag expand(const WorkflowSpec& spec);

/// Incomplete nodes whose predecessors are all in `completed`, in node order.
std::vector<std::string> ready_frontier(const ExpandedDag& dag,
                                        const std::set<std::string>& completed);

nlohmann::json dag_to_json(const ExpandedDag& dag);
ExpandedDag dag_from_json(const nlohmann::json& j);

}  // namespace ensemble
