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

#include "ensemble/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include <fmt/format.h>

#include "ensemble/broker.hpp"
#include "ensemble/error.hpp"

namespace ensemble {
namespace {

using json = nlohmann::json;

const json& require(const json& args, const char* key) {
  if (!args.is_object() || !args.contains(key)) {
    throw Error(ErrorCode::kProtocol, fmt::format("missing argument '{}'", key));
  }
  return args.at(key);
}

std::optional<std::string> optional_study(const json& args) {
  if (!args.is_object() || !args.contains("study") || args.at("study").is_null()) return std::nullopt;
  return args.at("study").get<std::string>();
}

json ack_result_to_json(const AckResult& r) {
  return {{"study_id", r.study_id},
          {"node_id", r.node_id},
          {"status", task_status_name(r.status)},
          {"progress", progress_to_json(r.progress)}};
}

json dispatch(Broker& broker, const std::string& op, const json& args) {
  if (op == "PING") return "PONG";
  if (op == "ENQUEUE") {
    const json& list = require(args, "envelopes");
    if (!list.is_array()) throw Error(ErrorCode::kProtocol, "'envelopes' must be an array");
    std::vector<TaskEnvelope> envelopes;
    envelopes.reserve(list.size());
    for (const json& e : list) envelopes.push_back(envelope_from_json(e));
    bool force = args.value("force", false);
    EnqueueResult r = broker.enqueue(std::move(envelopes), force);
    return {{"accepted", r.accepted}, {"duplicates", r.duplicates}};
  }
  if (op == "CONSUME") {
    std::string consumer = require(args, "consumer").get<std::string>();
    std::int64_t timeout = std::clamp<std::int64_t>(args.value("timeout_ms", 0), 0, 60'000);
    auto d = broker.consume(consumer, std::chrono::milliseconds(timeout));
    if (!d) return nullptr;
    return {{"tag", d->tag}, {"envelope", envelope_to_json(d->envelope)}};
  }
  if (op == "ACK") {
    AckOutcome outcome;
    outcome.success = require(args, "success").get<bool>();
    outcome.exit_code = args.value("exit_code", outcome.success ? 0 : 1);
    outcome.detail = args.value("detail", json());
    return ack_result_to_json(broker.ack(require(args, "tag").get<std::uint64_t>(), outcome));
  }
  if (op == "NACK") {
    broker.nack(require(args, "tag").get<std::uint64_t>());
    return nullptr;
  }
  if (op == "REQUEUE") {
    if (args.is_object() && args.value("scope", std::string()) == "failed") {
      return {{"count", broker.revive_dead(require(args, "study").get<std::string>())}};
    }
    std::int64_t lease = require(args, "lease_ms").get<std::int64_t>();
    return {{"count", broker.requeue_expired(std::chrono::milliseconds(std::max<std::int64_t>(lease, 0)))}};
  }
  if (op == "STATS") {
    bool records = args.is_object() && args.value("records", false);
    return stats_to_json(broker.stats(optional_study(args), records));
  }
  if (op == "PURGE") return {{"count", broker.purge(optional_study(args))}};
  throw Error(ErrorCode::kProtocol, fmt::format("unknown op '{}'", op));
}

}  // namespace

std::string encode_frame(std::string_view payload) {
  if (payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kMessageTooLarge, fmt::format("frame of {} bytes", payload.size()));
  }
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(kFrameHeaderBytes + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

std::uint32_t decode_frame_length(const unsigned char* header) {
  return (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
         (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
}

std::size_t max_frame_bytes(std::size_t message_limit) {
  const std::size_t cap = std::numeric_limits<std::uint32_t>::max();
  if (message_limit > cap / 4) return cap;
  return std::max<std::size_t>(message_limit * 4, 1u << 20);
}

json make_ok_response(json data) {
  return {{"ok", true}, {"data", std::move(data)}, {"err", nullptr}};
}

json make_error_response(std::string_view err) {
  return {{"ok", false}, {"data", nullptr}, {"err", std::string(err)}};
}

json handle_request(Broker& broker, const json& request) {
  try {
    if (!request.is_object() || !request.contains("op") || !request.at("op").is_string()) {
      throw Error(ErrorCode::kProtocol, "request must be an object with a string 'op'");
    }
    const json empty = json::object();
    const json& args = request.contains("args") && !request.at("args").is_null() ? request.at("args") : empty;
    return make_ok_response(dispatch(broker, request.at("op").get<std::string>(), args));
  } catch (const Error& e) {
    return make_error_response(e.what());
  } catch (const json::exception& e) {
    return make_error_response(fmt::format("{}: {}", error_code_name(ErrorCode::kProtocol), e.what()));
  }
}

}  // namespace ensemble
