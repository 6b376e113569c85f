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

#include "ensemble/server.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <chrono>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ensemble/broker.hpp"
#include "ensemble/error.hpp"
#include "ensemble/envelope.hpp"
#include "ensemble/protocol.hpp"
#include "socket.hpp"

namespace ensemble {

using json = nlohmann::json;

BrokerServer::BrokerServer(Broker& broker, std::string host, std::uint16_t port)
    : broker_(broker), host_(std::move(host)), port_(port) {}

BrokerServer::~BrokerServer() { stop(); }

std::string BrokerServer::endpoint() const {
  const std::string host = host_.empty() || host_ == "0.0.0.0" ? "127.0.0.1" : host_;
  return fmt::format("tcp://{}:{}", host, port_);
}

void BrokerServer::start() {
  std::uint16_t bound = 0;
  net::Socket s = net::listen_tcp(host_, port_, bound);
  port_ = bound;
  listen_fd_ = s.release();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
  spdlog::info("broker listening on {}", endpoint());
}

void BrokerServer::stop() {
  if (listen_fd_ < 0) return;
  stopping_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  std::list<Connection> conns;
  {
    std::lock_guard lock(mu_);
    for (Connection& c : connections_) ::shutdown(c.fd, SHUT_RDWR);
    conns.splice(conns.end(), connections_);
  }
  for (Connection& c : conns) {
    if (c.thread.joinable()) c.thread.join();
    ::close(c.fd);
  }
}

void BrokerServer::reap_finished() {
  std::lock_guard lock(mu_);
  for (auto it = connections_.begin(); it != connections_.end();) {
    if (it->done) {
      it->thread.join();
      ::close(it->fd);
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

void BrokerServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 200);
    if (stopping_) break;
    reap_finished();
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
      if (stopping_) break;
      spdlog::warn("accept failed: {}", std::strerror(errno));
      continue;
    }
    net::set_nodelay(fd);
    std::lock_guard lock(mu_);
    Connection& conn = connections_.emplace_back();
    conn.fd = fd;
    conn.thread = std::thread([this, &conn] {
      serve(conn);
      conn.done = true;
    });
  }
}

namespace {

// Long consumes are split so a stopping server is not held up by an idle
// client's timeout.
json run_request(Broker& broker, json request, const std::atomic<bool>& stopping) {
  constexpr std::int64_t kSliceMs = 200;
  if (request.is_object() && request.value("op", json()) == "CONSUME" && request.contains("args") &&
      request["args"].is_object()) {
    json& args = request["args"];
    std::int64_t remaining = 0;
    if (args.contains("timeout_ms") && args["timeout_ms"].is_number_integer()) {
      remaining = args["timeout_ms"].get<std::int64_t>();
    }
    while (remaining > kSliceMs && !stopping) {
      args["timeout_ms"] = kSliceMs;
      json response = handle_request(broker, request);
      if (!response["ok"].get<bool>() || !response["data"].is_null()) return response;
      remaining -= kSliceMs;
    }
    args["timeout_ms"] = stopping ? 0 : remaining;
  }
  return handle_request(broker, request);
}

}  // namespace

void BrokerServer::serve(Connection& conn) {
  const std::size_t max_frame = max_frame_bytes(broker_.options().message_limit);
  const int fd = conn.fd;
  unsigned char header[kFrameHeaderBytes];
  std::string body;
  while (!stopping_) {
    if (!net::read_exact(fd, header, sizeof(header))) break;
    const std::uint32_t len = decode_frame_length(header);
    json response;
    bool close_after = false;
    if (len == 0) {
      response = make_error_response(fmt::format("{}: empty frame", error_code_name(ErrorCode::kProtocol)));
    } else if (len > max_frame) {
      // Oversized body: reply, then close.
      response = make_error_response(fmt::format("{}: frame of {} bytes exceeds limit {}",
                                                 error_code_name(ErrorCode::kMessageTooLarge), len, max_frame));
      close_after = true;
    } else {
      body.resize(len);
      if (!net::read_exact(fd, body.data(), len)) break;
      json request = json::parse(body, nullptr, false);
      if (request.is_discarded()) {
        response = make_error_response(fmt::format("{}: malformed JSON", error_code_name(ErrorCode::kProtocol)));
      } else {
        response = run_request(broker_, std::move(request), stopping_);
      }
    }
    if (!net::write_all(fd, encode_frame(canonical_json(response)))) break;
    if (close_after) break;
  }
  ::shutdown(fd, SHUT_RDWR);
}

}  // namespace ensemble
