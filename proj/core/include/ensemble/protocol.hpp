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

#include <nlohmann/json.hpp>

namespace ensemble {

class Broker;

/// Frames are a 4-byte big-endian length followed by canonical JSON.
inline constexpr std::size_t kFrameHeaderBytes = 4;

std::string encode_frame(std::string_view payload);
std::uint32_t decode_frame_length(const unsigned char* header);

/// Largest frame body the server accepts for a given envelope limit. A batch
/// of envelopes may share one ENQUEUE frame.
std::size_t max_frame_bytes(std::size_t message_limit);

nlohmann::json make_ok_response(nlohmann::json data);
nlohmann::json make_error_response(std::string_view err);

/// Executes one request object against the broker. Never throws; failures
/// come back as `{"ok":false,"err":"<ErrorName>: ..."}`.
nlohmann::json handle_request(Broker& broker, const nlohmann::json& request);

}  // namespace ensemble
