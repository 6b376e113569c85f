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

#include "ensemble/dag.hpp"

#include <algorithm>
#include <deque>
#include <functional>

#include <fmt/format.h>

#include "ensemble/error.hpp"

namespace ensemble {
namespace {

bool references_parameters(const StepDefinition& step, const ParameterBlock& params) {
  if (params.empty()) return false;
  for (const std::string& token : referenced_tokens(step.command)) {
    std::string_view name = token;
    if (name.ends_with(".label")) name.remove_suffix(6);
    if (params.find(name) != nullptr) return true;
  }
  return false;
}

}  // namespace

ExpandedDag::ExpandedDag(std::vector<StepInstance> nodes,
                         std::vector<std::pair<std::string, std::string>> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i].node_id, i).second) {
      throw Error(ErrorCode::kExpansion, fmt::format("duplicate node id '{}'", nodes_[i].node_id));
    }
  }
  preds_.resize(nodes_.size());
  succs_.resize(nodes_.size());
  for (const auto& [from, to] : edges_) {
    auto f = index_.find(from);
    auto t = index_.find(to);
    if (f == index_.end() || t == index_.end()) {
      throw Error(ErrorCode::kExpansion, fmt::format("edge {} -> {} has a missing endpoint", from, to));
    }
    succs_[f->second].push_back(to);
    preds_[t->second].push_back(from);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (preds_[i].empty()) root_ids_.push_back(nodes_[i].node_id);
  }
}

const StepInstance* ExpandedDag::find(std::string_view node_id) const {
  auto it = index_.find(node_id);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const StepInstance& ExpandedDag::node(std::string_view node_id) const {
  const StepInstance* n = find(node_id);
  if (n == nullptr) throw Error(ErrorCode::kExpansion, fmt::format("unknown node '{}'", node_id));
  return *n;
}

const std::vector<std::string>& ExpandedDag::predecessors(std::string_view node_id) const {
  auto it = index_.find(node_id);
  if (it == index_.end()) throw Error(ErrorCode::kExpansion, fmt::format("unknown node '{}'", node_id));
  return preds_[it->second];
}

const std::vector<std::string>& ExpandedDag::successors(std::string_view node_id) const {
  auto it = index_.find(node_id);
  if (it == index_.end()) throw Error(ErrorCode::kExpansion, fmt::format("unknown node '{}'", node_id));
  return succs_[it->second];
}

std::vector<std::string> ExpandedDag::topological_order() const {
  std::vector<std::size_t> indegree(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) indegree[i] = preds_[i].size();
  std::vector<std::string> order;
  order.reserve(nodes_.size());
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  while (!ready.empty()) {
    std::size_t i = ready.front();
    ready.pop_front();
    order.push_back(nodes_[i].node_id);
    for (const std::string& s : succs_[i]) {
      std::size_t j = index_.find(s)->second;
      if (--indegree[j] == 0) ready.push_back(j);
    }
  }
  if (order.size() != nodes_.size()) throw Error(ErrorCode::kExpansion, "expanded graph has a cycle");
  return order;
}

ExpandedDag expand(const WorkflowSpec& spec) {
  const std::size_t k = spec.parameters.combinations();

  // Steps are validated acyclic, but declaration order need not be
  // topological; resolve "parameterized" lazily.
  std::map<std::string, int> parameterized;  // -1 unknown, 0 no, 1 yes
  std::function<bool(const StepDefinition&, int)> is_parameterized =
      [&](const StepDefinition& step, int depth) -> bool {
    if (depth > static_cast<int>(spec.steps.size())) {
      throw Error(ErrorCode::kExpansion, "dependency cycle during expansion");
    }
    auto it = parameterized.find(step.name);
    if (it != parameterized.end()) return it->second == 1;
    bool result = references_parameters(step, spec.parameters);
    for (const Dependency& dep : step.depends) {
      const StepDefinition* d = spec.find_step(dep.step);
      if (d == nullptr) {
        throw Error(ErrorCode::kExpansion,
                    fmt::format("step '{}' depends on nonexistent step '{}'", step.name, dep.step));
      }
      bool dep_param = is_parameterized(*d, depth + 1);
      if (!dep.all_instances && dep_param) result = true;
    }
    parameterized[step.name] = result ? 1 : 0;
    return result;
  };

  auto instance_id = [&](const std::string& step, bool param, std::size_t index) {
    return param && !spec.parameters.empty() ? step + "/" + spec.parameters.label(index) : step;
  };

  std::vector<StepInstance> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  for (const StepDefinition& step : spec.steps) {
    const bool param = is_parameterized(step, 0);
    const std::size_t count = param ? k : 1;
    for (std::size_t i = 0; i < count; ++i) {
      StepInstance node;
      node.step = step.name;
      node.parameter_index = i;
      node.parameter_label = param ? spec.parameters.label(i) : "";
      node.workspace_path = instance_id(step.name, param, i);
      node.node_id = node.workspace_path;
      node.sample_scoped = step.run_mode == RunMode::kPerSample;
      node.resolved_command =
          param ? substitute_partial(step.command, spec.parameters.bindings(i)) : step.command;
      for (const Dependency& dep : step.depends) {
        const StepDefinition* d = spec.find_step(dep.step);
        if (d == nullptr) {
          throw Error(ErrorCode::kExpansion,
                      fmt::format("step '{}' depends on nonexistent step '{}'", step.name, dep.step));
        }
        const bool dep_param = is_parameterized(*d, 0);
        const std::string token = dep.step + ".workspace";
        if (dep.all_instances || !dep_param) {
          node.dependency_workspaces[token] = dep.step;
          std::size_t dep_count = dep_param ? k : 1;
          for (std::size_t j = 0; j < dep_count; ++j) {
            edges.emplace_back(instance_id(dep.step, dep_param, j), node.node_id);
          }
        } else {
          std::string dep_id = instance_id(dep.step, true, i);
          node.dependency_workspaces[token] = dep_id;
          edges.emplace_back(dep_id, node.node_id);
        }
      }
      nodes.push_back(std::move(node));
    }
  }
  ExpandedDag dag(std::move(nodes), std::move(edges));
  dag.topological_order();
  return dag;
}

std::vector<std::string> ready_frontier(const ExpandedDag& dag,
                                        const std::set<std::string>& completed) {
  std::vector<std::string> out;
  for (const StepInstance& node : dag.nodes()) {
    if (completed.contains(node.node_id)) continue;
    const auto& preds = dag.predecessors(node.node_id);
    if (std::all_of(preds.begin(), preds.end(),
                    [&](const std::string& p) { return completed.contains(p); })) {
      out.push_back(node.node_id);
    }
  }
  return out;
}

nlohmann::json dag_to_json(const ExpandedDag& dag) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const StepInstance& n : dag.nodes()) {
    nodes.push_back({{"node_id", n.node_id},
                     {"step", n.step},
                     {"parameter_index", n.parameter_index},
                     {"parameter_label", n.parameter_label},
                     {"resolved_command", n.resolved_command},
                     {"workspace_path", n.workspace_path},
                     {"sample_scoped", n.sample_scoped},
                     {"dependency_workspaces", n.dependency_workspaces}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [from, to] : dag.edges()) edges.push_back({from, to});
  return {{"nodes", nodes}, {"edges", edges}};
}

ExpandedDag dag_from_json(const nlohmann::json& j) {
  try {
    std::vector<StepInstance> nodes;
    for (const auto& n : j.at("nodes")) {
      StepInstance s;
      s.node_id = n.at("node_id").get<std::string>();
      s.step = n.at("step").get<std::string>();
      s.parameter_index = n.at("parameter_index").get<std::size_t>();
      s.parameter_label = n.at("parameter_label").get<std::string>();
      s.resolved_command = n.at("resolved_command").get<std::string>();
      s.workspace_path = n.at("workspace_path").get<std::string>();
      s.sample_scoped = n.at("sample_scoped").get<bool>();
      s.dependency_workspaces =
          n.at("dependency_workspaces").get<std::map<std::string, std::string>>();
      nodes.push_back(std::move(s));
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : j.at("edges")) {
      edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    }
    return ExpandedDag(std::move(nodes), std::move(edges));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kExpansion, fmt::format("malformed graph document: {}", e.what()));
  }
}

}  // namespace ensemble
