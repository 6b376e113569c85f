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

#include "ensemble/envelope.hpp"

#include <fmt/format.h>

#include "ensemble/error.hpp"

namespace ensemble {

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kGeneration: return "generation";
    case TaskKind::kReal: return "real";
    case TaskKind::kStepOnce: return "step_once";
  }
  return "real";
}

TaskKind task_kind_from_name(std::string_view name) {
  if (name == "generation") return TaskKind::kGeneration;
  if (name == "real") return TaskKind::kReal;
  if (name == "step_once") return TaskKind::kStepOnce;
  throw Error(ErrorCode::kCorruptEnvelope, fmt::format("unknown task kind '{}'", name));
}

std::uint64_t TaskEnvelope::sample_count() const {
  if (range) return range->width();
  return sample ? 1 : 0;
}

nlohmann::json envelope_to_json(const TaskEnvelope& e) {
  nlohmann::json j = nlohmann::json::object();
  j["v"] = kEnvelopeVersion;
  j["task_id"] = e.task_id;
  j["kind"] = task_kind_name(e.kind);
  j["study_id"] = e.study_id;
  j["priority"] = e.priority;
  j["node_id"] = e.node_id;
  j["range"] = e.range ? nlohmann::json::array({e.range->lo, e.range->hi}) : nlohmann::json();
  j["sample"] = e.sample ? nlohmann::json(*e.sample) : nlohmann::json();
  j["retries"] = e.retries;
  j["payload"] = e.payload;
  return j;
}

TaskEnvelope envelope_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::kCorruptEnvelope, "envelope is not an object");
    if (j.at("v").get<int>() != kEnvelopeVersion) {
      throw Error(ErrorCode::kCorruptEnvelope, fmt::format("unsupported envelope version {}", j.at("v").dump()));
    }
    TaskEnvelope e;
    e.task_id = j.at("task_id").get<std::string>();
    e.kind = task_kind_from_name(j.at("kind").get<std::string>());
    e.study_id = j.at("study_id").get<std::string>();
    e.priority = j.at("priority").get<int>();
    e.node_id = j.at("node_id").get<std::string>();
    const auto& range = j.at("range");
    if (!range.is_null()) {
      if (!range.is_array() || range.size() != 2) {
        throw Error(ErrorCode::kCorruptEnvelope, "range must be [lo, hi]");
      }
      e.range = SampleRange{range.at(0).get<std::uint64_t>(), range.at(1).get<std::uint64_t>()};
      if (e.range->hi < e.range->lo) throw Error(ErrorCode::kCorruptEnvelope, "range has hi < lo");
    }
    const auto& sample = j.at("sample");
    if (!sample.is_null()) e.sample = sample.get<std::uint64_t>();
    e.retries = j.at("retries").get<int>();
    e.payload = j.at("payload");
    if (!e.payload.is_object()) throw Error(ErrorCode::kCorruptEnvelope, "payload must be an object");
    if (e.task_id.empty()) throw Error(ErrorCode::kCorruptEnvelope, "empty task_id");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kCorruptEnvelope, ex.what());
  }
}

std::string canonical_json(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

std::string serialize_envelope(const TaskEnvelope& envelope) {
  return canonical_json(envelope_to_json(envelope));
}

TaskEnvelope parse_envelope(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error(ErrorCode::kCorruptEnvelope, "envelope is not valid JSON");
  return envelope_from_json(j);
}

}  // namespace ensemble
