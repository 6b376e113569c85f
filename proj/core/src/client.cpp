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

#include "ensemble/client.hpp"

#include <charconv>
#include <cstdlib>
#include <mutex>

#include <fmt/format.h>

#include "ensemble/error.hpp"
#include "ensemble/protocol.hpp"
#include "socket.hpp"

namespace ensemble {
namespace {

using json = nlohmann::json;

class LocalClient final : public BrokerClient {
 public:
  explicit LocalClient(std::shared_ptr<Broker> broker) : broker_(std::move(broker)) {}

  void ping() override {}
  EnqueueResult enqueue(const std::vector<TaskEnvelope>& envelopes, bool force) override {
    return broker_->enqueue(envelopes, force);
  }
  std::optional<Delivery> consume(std::string_view consumer_id,
                                  std::chrono::milliseconds timeout) override {
    return broker_->consume(consumer_id, timeout);
  }
  AckResult ack(std::uint64_t tag, const AckOutcome& outcome) override { return broker_->ack(tag, outcome); }
  void nack(std::uint64_t tag) override { broker_->nack(tag); }
  std::size_t requeue_expired(std::chrono::milliseconds lease) override {
    return broker_->requeue_expired(lease);
  }
  std::size_t revive_dead(std::string_view study_id) override { return broker_->revive_dead(study_id); }
  BrokerStats stats(const std::optional<std::string>& study_id, bool include_records) override {
    return broker_->stats(study_id, include_records);
  }
  std::size_t purge(const std::optional<std::string>& study_id) override { return broker_->purge(study_id); }
  bool is_local() const override { return true; }

 private:
  std::shared_ptr<Broker> broker_;
};

class TcpClient final : public BrokerClient {
 public:
  TcpClient(Endpoint endpoint, std::chrono::milliseconds connect_timeout)
      : endpoint_(std::move(endpoint)), connect_timeout_(connect_timeout) {
    connect();
  }

  void ping() override { call("PING", json::object()); }

  EnqueueResult enqueue(const std::vector<TaskEnvelope>& envelopes, bool force) override {
    EnqueueResult total;
    // Large batches are split so no frame nears the server's limit.
    constexpr std::size_t kBatchBytes = 4u << 20;
    json batch = json::array();
    std::size_t bytes = 0;
    auto flush = [&] {
      if (batch.empty()) return;
      json data = call("ENQUEUE", {{"envelopes", std::move(batch)}, {"force", force}});
      total.accepted += data.at("accepted").get<std::size_t>();
      total.duplicates += data.at("duplicates").get<std::size_t>();
      batch = json::array();
      bytes = 0;
    };
    for (const TaskEnvelope& e : envelopes) {
      json j = envelope_to_json(e);
      bytes += canonical_json(j).size();
      batch.push_back(std::move(j));
      if (bytes >= kBatchBytes) flush();
    }
    flush();
    return total;
  }

  std::optional<Delivery> consume(std::string_view consumer_id,
                                  std::chrono::milliseconds timeout) override {
    json data = call("CONSUME", {{"consumer", std::string(consumer_id)}, {"timeout_ms", timeout.count()}});
    if (data.is_null()) return std::nullopt;
    return Delivery{data.at("tag").get<std::uint64_t>(), envelope_from_json(data.at("envelope"))};
  }

  AckResult ack(std::uint64_t tag, const AckOutcome& outcome) override {
    json data = call("ACK", {{"tag", tag},
                             {"success", outcome.success},
                             {"exit_code", outcome.exit_code},
                             {"detail", outcome.detail}});
    AckResult r;
    r.study_id = data.at("study_id").get<std::string>();
    r.node_id = data.at("node_id").get<std::string>();
    r.status = task_status_from_name(data.at("status").get<std::string>());
    r.progress = progress_from_json(data.at("progress"));
    return r;
  }

  void nack(std::uint64_t tag) override { call("NACK", {{"tag", tag}}); }

  std::size_t requeue_expired(std::chrono::milliseconds lease) override {
    return call("REQUEUE", {{"lease_ms", lease.count()}}).at("count").get<std::size_t>();
  }

  std::size_t revive_dead(std::string_view study_id) override {
    return call("REQUEUE", {{"study", std::string(study_id)}, {"scope", "failed"}})
        .at("count")
        .get<std::size_t>();
  }

  BrokerStats stats(const std::optional<std::string>& study_id, bool include_records) override {
    json args = {{"study", study_id ? json(*study_id) : json()}, {"records", include_records}};
    return stats_from_json(call("STATS", args));
  }

  std::size_t purge(const std::optional<std::string>& study_id) override {
    return call("PURGE", {{"study", study_id ? json(*study_id) : json()}}).at("count").get<std::size_t>();
  }

  bool is_local() const override { return false; }

 private:
  void connect() { socket_ = net::connect_tcp(endpoint_.host, endpoint_.port, connect_timeout_); }

  [[noreturn]] void lost(const char* what) {
    socket_.close();
    throw Error(ErrorCode::kBrokerUnreachable,
                fmt::format("{} {}:{} failed", what, endpoint_.host, endpoint_.port));
  }

  json call(const char* op, json args) {
    std::lock_guard lock(mu_);
    if (!socket_.valid()) connect();
    const std::string frame = encode_frame(canonical_json({{"op", op}, {"args", std::move(args)}}));
    if (!net::write_all(socket_.fd(), frame)) lost("send to");
    unsigned char header[kFrameHeaderBytes];
    if (!net::read_exact(socket_.fd(), header, sizeof(header))) lost("receive from");
    std::string body(decode_frame_length(header), '\0');
    if (!net::read_exact(socket_.fd(), body.data(), body.size())) lost("receive from");
    json response = json::parse(body, nullptr, false);
    if (response.is_discarded() || !response.is_object() || !response.contains("ok")) {
      socket_.close();
      throw Error(ErrorCode::kProtocol, "malformed response from broker");
    }
    if (response.at("ok").get<bool>()) return response.at("data");
    throw remote_error(response.value("err", std::string("ProtocolError: unknown failure")));
  }

  static Error remote_error(const std::string& err) {
    const auto colon = err.find(": ");
    if (colon != std::string::npos) {
      ErrorCode code = error_code_from_name(std::string_view(err).substr(0, colon));
      return Error(code, err.substr(colon + 2));
    }
    return Error(ErrorCode::kProtocol, err);
  }

  Endpoint endpoint_;
  std::chrono::milliseconds connect_timeout_;
  std::mutex mu_;
  net::Socket socket_;
};

}  // namespace

Endpoint parse_endpoint(std::string_view text) {
  if (text == kLocalEndpoint) return Endpoint{true, {}, 0};
  std::string_view rest = text;
  if (rest.substr(0, 6) == "tcp://") rest.remove_prefix(6);
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == rest.size()) {
    throw Error(ErrorCode::kConfig, fmt::format("bad broker endpoint '{}'", text));
  }
  std::string_view host = rest.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  std::string_view port_text = rest.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port > 65535) {
    throw Error(ErrorCode::kConfig, fmt::format("bad port in broker endpoint '{}'", text));
  }
  return Endpoint{false, std::string(host), static_cast<std::uint16_t>(port)};
}

std::string resolve_broker_endpoint(std::string_view configured) {
  const char* env = std::getenv("ENSEMBLE_BROKER");
  if (env && *env) return env;
  return std::string(configured);
}

std::shared_ptr<Broker> shared_local_broker() {
  static std::shared_ptr<Broker> broker = std::make_shared<Broker>();
  return broker;
}

std::unique_ptr<BrokerClient> make_local_client(std::shared_ptr<Broker> broker) {
  return std::make_unique<LocalClient>(std::move(broker));
}

std::unique_ptr<BrokerClient> connect_broker(std::string_view endpoint,
                                             std::chrono::milliseconds connect_timeout) {
  Endpoint e = parse_endpoint(endpoint);
  if (e.local) return make_local_client(shared_local_broker());
  return std::make_unique<TcpClient>(std::move(e), connect_timeout);
}

}  // namespace ensemble
