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

#include "ensemble/hierarchy.hpp"

#include <map>

#include <fmt/format.h>

#include "ensemble/error.hpp"
#include "ensemble/ids.hpp"

namespace ensemble {

std::vector<SampleRange> HierarchyPlan::split(SampleRange range) const {
  const std::uint64_t w = range.width();
  if (w == 0) return {};
  const std::uint64_t chunk = (w + b - 1) / b;
  const std::uint64_t children = (w + chunk - 1) / chunk;
  const std::uint64_t base = w / children;
  const std::uint64_t extra = w % children;
  std::vector<SampleRange> out;
  out.reserve(children);
  std::uint64_t lo = range.lo;
  for (std::uint64_t i = 0; i < children; ++i) {
    std::uint64_t width = base + (i < extra ? 1 : 0);
    out.push_back({lo, lo + width});
    lo += width;
  }
  return out;
}

TaskCounts HierarchyPlan::count_tasks() const {
  // Memoized by width.
  std::map<std::uint64_t, TaskCounts> memo;
  auto count = [&](auto&& self, std::uint64_t width) -> TaskCounts {
    if (width <= b) return {1, width};
    if (auto it = memo.find(width); it != memo.end()) return it->second;
    TaskCounts total{1, 0};
    for (const SampleRange& child : split({0, width})) {
      TaskCounts c = self(self, child.width());
      total.generation += c.generation;
      total.real += c.real;
    }
    memo[width] = total;
    return total;
  };
  return count(count, n);
}

HierarchyPlan plan_hierarchy(std::uint64_t n, std::int64_t b) {
  if (b < 2) throw Error(ErrorCode::kConfig, fmt::format("branching factor must be >= 2, got {}", b));
  if (b > 0xFFFFFFFFLL) throw Error(ErrorCode::kConfig, "branching factor too large");
  HierarchyPlan plan;
  plan.n = n;
  plan.b = static_cast<std::uint32_t>(b);
  plan.depth = 1;
  unsigned __int128 reach = plan.b;
  while (reach < n) {
    reach *= plan.b;
    ++plan.depth;
  }
  return plan;
}

nlohmann::json generation_payload_json(const GenerationPayload& p) {
  return {{"study_root", p.study_root},
          {"n", p.n},
          {"b", p.b},
          {"priority_real", p.priority_real},
          {"max_retries", p.max_retries}};
}

GenerationPayload generation_payload_from(const TaskEnvelope& task) {
  try {
    GenerationPayload p;
    const auto& j = task.payload;
    p.study_root = j.at("study_root").get<std::string>();
    p.n = j.at("n").get<std::uint64_t>();
    p.b = j.at("b").get<std::uint32_t>();
    p.priority_real = j.at("priority_real").get<int>();
    p.max_retries = j.at("max_retries").get<int>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptEnvelope,
                fmt::format("generation payload of task {}: {}", task.task_id, e.what()));
  }
}

HierarchyPlan plan_from_payload(const TaskEnvelope& task) {
  GenerationPayload p = generation_payload_from(task);
  if (p.b < 2) throw Error(ErrorCode::kCorruptEnvelope, "generation payload has b < 2");
  return plan_hierarchy(p.n, p.b);
}

std::string generation_task_id(std::string_view study_id, std::string_view node_id,
                               SampleRange range) {
  return stable_id({study_id, node_id, "generation", std::to_string(range.lo),
                    std::to_string(range.hi)});
}

std::string real_task_id(std::string_view study_id, std::string_view node_id,
                         std::uint64_t sample) {
  return stable_id({study_id, node_id, "real", std::to_string(sample)});
}

std::string once_task_id(std::string_view study_id, std::string_view node_id) {
  return stable_id({study_id, node_id, "step_once"});
}

TaskEnvelope make_root_envelope(std::string_view study_id, std::string_view node_id,
                                const GenerationPayload& payload, int priority_generation) {
  TaskEnvelope e;
  e.kind = TaskKind::kGeneration;
  e.study_id = std::string(study_id);
  e.node_id = std::string(node_id);
  e.range = SampleRange{0, payload.n};
  e.task_id = generation_task_id(study_id, node_id, *e.range);
  e.priority = priority_generation;
  e.retries = payload.max_retries;
  e.payload = generation_payload_json(payload);
  return e;
}

std::vector<TaskEnvelope> expand_generation_task(const TaskEnvelope& task,
                                                 const HierarchyPlan& plan) {
  if (task.kind != TaskKind::kGeneration) {
    throw Error(ErrorCode::kCorruptEnvelope,
                fmt::format("task {} is {}, not generation", task.task_id, task_kind_name(task.kind)));
  }
  if (!task.range) {
    throw Error(ErrorCode::kCorruptEnvelope, fmt::format("generation task {} has no range", task.task_id));
  }
  const SampleRange range = *task.range;
  if (range.hi > plan.n) {
    throw Error(ErrorCode::kCorruptEnvelope,
                fmt::format("range [{}, {}) exceeds the {} planned samples", range.lo, range.hi, plan.n));
  }
  GenerationPayload payload = generation_payload_from(task);

  std::vector<TaskEnvelope> children;
  if (plan.emits_real(range)) {
    nlohmann::json real_payload = {{"study_root", payload.study_root}};
    children.reserve(range.width());
    for (std::uint64_t s = range.lo; s < range.hi; ++s) {
      TaskEnvelope child;
      child.task_id = real_task_id(task.study_id, task.node_id, s);
      child.kind = TaskKind::kReal;
      child.study_id = task.study_id;
      child.priority = payload.priority_real;
      child.node_id = task.node_id;
      child.sample = s;
      child.retries = payload.max_retries;
      child.payload = real_payload;
      children.push_back(std::move(child));
    }
    return children;
  }
  for (const SampleRange& sub : plan.split(range)) {
    TaskEnvelope child;
    child.task_id = generation_task_id(task.study_id, task.node_id, sub);
    child.kind = TaskKind::kGeneration;
    child.study_id = task.study_id;
    child.priority = task.priority;
    child.node_id = task.node_id;
    child.range = sub;
    child.retries = payload.max_retries;
    child.payload = task.payload;
    children.push_back(std::move(child));
  }
  return children;
}

}  // namespace ensemble
