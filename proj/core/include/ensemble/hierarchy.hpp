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
#include <string>
#include <string_view>
#include <vector>

#include "ensemble/envelope.hpp"

namespace ensemble {

struct TaskCounts {
  std::uint64_t generation = 0;
  std::uint64_t real = 0;

  std::uint64_t total() const { return generation + real; }
  bool operator==(const TaskCounts&) const = default;
};

/// Fan-out plan over n samples with at most b children per generation task.
///
/// A generation task whose range is at most b wide emits one real task per
/// sample. A wider range of width w is split into ceil(w / ceil(w / b))
/// contiguous children whose widths differ by at most one (wider first).
struct HierarchyPlan {
  std::uint64_t n = 0;
  std::uint32_t b = 2;
  std::uint32_t depth = 1;  // generation levels: smallest L >= 1 with b^L >= n

  SampleRange root_range() const { return {0, n}; }
  bool emits_real(SampleRange range) const { return range.width() <= b; }
  std::vector<SampleRange> split(SampleRange range) const;

  /// Generation and real tasks produced by fully expanding the root.
  TaskCounts count_tasks() const;
};

/// Throws Error(kConfig) when b < 2.
HierarchyPlan plan_hierarchy(std::uint64_t n, std::int64_t b);

/// Metadata every generation envelope carries so any worker can expand it
/// without other state.
struct GenerationPayload {
  std::string study_root;
  std::uint64_t n = 0;
  std::uint32_t b = 2;
  int priority_real = 10;
  int max_retries = 3;
};

nlohmann::json generation_payload_json(const GenerationPayload& p);
GenerationPayload generation_payload_from(const TaskEnvelope& task);  // kCorruptEnvelope
HierarchyPlan plan_from_payload(const TaskEnvelope& task);

std::string generation_task_id(std::string_view study_id, std::string_view node_id, SampleRange range);
std::string real_task_id(std::string_view study_id, std::string_view node_id, std::uint64_t sample);
std::string once_task_id(std::string_view study_id, std::string_view node_id);

/// The single generation envelope covering [0, n) for one DAG node.
TaskEnvelope make_root_envelope(std::string_view study_id, std::string_view node_id,
                                const GenerationPayload& payload, int priority_generation);

/// Children of one generation task: real envelopes (one per sample) when the
/// range is at most b wide, otherwise generation envelopes for split().
/// Child task ids are deterministic across re-expansion. Throws Error(kCorruptEnvelope) when the task is
/// not a well-formed generation envelope.
std::vector<TaskEnvelope> expand_generation_task(const TaskEnvelope& task,
                                                 const HierarchyPlan& plan);

}  // namespace ensemble
