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

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ensemble/broker.hpp"

namespace ensemble {

/// Broker operations, either in-process or over TCP. One handle per thread.
class BrokerClient {
 public:
  virtual ~BrokerClient() = default;

  virtual void ping() = 0;
  virtual EnqueueResult enqueue(const std::vector<TaskEnvelope>& envelopes, bool force = false) = 0;
  virtual std::optional<Delivery> consume(std::string_view consumer_id,
                                          std::chrono::milliseconds timeout) = 0;
  virtual AckResult ack(std::uint64_t tag, const AckOutcome& outcome) = 0;
  virtual void nack(std::uint64_t tag) = 0;
  virtual std::size_t requeue_expired(std::chrono::milliseconds lease) = 0;
  virtual std::size_t revive_dead(std::string_view study_id) = 0;
  virtual BrokerStats stats(const std::optional<std::string>& study_id,
                            bool include_records = false) = 0;
  virtual std::size_t purge(const std::optional<std::string>& study_id) = 0;

  /// True when the broker lives in this process.
  virtual bool is_local() const = 0;
};

struct Endpoint {
  bool local = false;
  std::string host;
  std::uint16_t port = 0;
};

inline constexpr std::string_view kLocalEndpoint = "local:";

/// Accepts `local:`, `host:port` and `tcp://host:port`. kConfig otherwise.
Endpoint parse_endpoint(std::string_view text);

/// ENSEMBLE_BROKER wins over the configured value when set and non-empty.
std::string resolve_broker_endpoint(std::string_view configured);

/// The process-wide in-memory broker behind `local:`.
std::shared_ptr<Broker> shared_local_broker();

std::unique_ptr<BrokerClient> make_local_client(std::shared_ptr<Broker> broker);

/// TCP endpoints connect eagerly and throw kBrokerUnreachable on failure.
std::unique_ptr<BrokerClient> connect_broker(std::string_view endpoint,
                                             std::chrono::milliseconds connect_timeout =
                                                 std::chrono::seconds(5));

}  // namespace ensemble
