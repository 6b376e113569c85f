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
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace ensemble {

enum class TaskKind { kGeneration, kReal, kStepOnce };

std::string_view task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(std::string_view name);  // throws kCorruptEnvelope

/// Half-open sample index range [lo, hi).
struct SampleRange {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;

  std::uint64_t width() const { return hi - lo; }
  bool operator==(const SampleRange&) const = default;
};

/// One queued unit of work.
///
/// generation: `range` is the sample span to fan out, `sample` is null.
/// real:       `sample` is the index; `range` is null, or set to [lo, hi)
///             when the envelope is a bundle of contiguous samples.
/// step_once:  both null.
struct TaskEnvelope {
  std::string task_id;
  TaskKind kind = TaskKind::kReal;
  std::string study_id;
  int priority = 0;
  std::string node_id;
  std::optional<SampleRange> range;
  std::optional<std::uint64_t> sample;
  int retries = 0;  // remaining
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const TaskEnvelope&) const = default;

  bool is_bundle() const { return kind == TaskKind::kReal && range.has_value(); }
  /// Samples this envelope executes or fans out.
  std::uint64_t sample_count() const;
};

inline constexpr int kEnvelopeVersion = 1;

/// {"v":1,"task_id":..,"kind":..,"study_id":..,"priority":..,"node_id":..,
///  "range":[lo,hi]|null,"sample":int|null,"retries":..,"payload":{..}}
nlohmann::json envelope_to_json(const TaskEnvelope& envelope);

/// Throws Error(kCorruptEnvelope) when fields are missing or mistyped.
TaskEnvelope envelope_from_json(const nlohmann::json& j);

/// Canonical JSON: sorted keys, no insignificant whitespace, UTF-8.
std::string canonical_json(const nlohmann::json& j);

std::string serialize_envelope(const TaskEnvelope& envelope);
TaskEnvelope parse_envelope(std::string_view text);

}  // namespace ensemble
