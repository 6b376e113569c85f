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

#include "oplog.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <zlib.h>

#include "ensemble/envelope.hpp"
#include "ensemble/error.hpp"

namespace ensemble {
namespace {

[[noreturn]] void storage_error(const std::string& what) {
  throw Error(ErrorCode::kStorage, fmt::format("{}: {}", what, std::strerror(errno)));
}

std::uint32_t crc_of(std::string_view data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_error("op log write");
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void fsync_dir(const std::filesystem::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

OpLog::OpLog(std::filesystem::path dir, bool fsync) : dir_(std::move(dir)), fsync_(fsync) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::kStorage, fmt::format("cannot create '{}': {}", dir_.string(), ec.message()));
  fd_ = ::open((dir_ / "ops.log").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) storage_error("open op log");
}

OpLog::~OpLog() {
  if (fd_ >= 0) ::close(fd_);
}

OpLog::Loaded OpLog::load() {
  Loaded loaded;
  std::uint64_t snapshot_seq = 0;
  const auto snapshot_path = dir_ / "snapshot.json";
  if (std::filesystem::exists(snapshot_path)) {
    std::ifstream in(snapshot_path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json snap = nlohmann::json::parse(buffer.str(), nullptr, false);
    if (snap.is_discarded() || !snap.contains("seq") || !snap.contains("state")) {
      throw Error(ErrorCode::kStorage, fmt::format("corrupt snapshot '{}'", snapshot_path.string()));
    }
    snapshot_seq = snap.at("seq").get<std::uint64_t>();
    loaded.state = std::move(snap.at("state"));
  }

  std::uint64_t last_seq = snapshot_seq;
  std::ifstream in(dir_ / "ops.log", std::ios::binary);
  std::string line;
  std::uint64_t good_bytes = 0;
  bool torn = false;
  while (in.good()) {
    std::streampos start = in.tellg();
    if (!std::getline(in, line)) break;
    if (in.eof()) {  // no trailing newline: the last write was torn
      torn = true;
      good_bytes = static_cast<std::uint64_t>(start);
      break;
    }
    bool ok = line.size() > 9 && line[8] == ' ';
    nlohmann::json op;
    if (ok) {
      std::string_view body(line.data() + 9, line.size() - 9);
      std::uint32_t crc = 0;
      ok = std::sscanf(line.c_str(), "%8x", &crc) == 1 && crc == crc_of(body);
      if (ok) {
        op = nlohmann::json::parse(body, nullptr, false);
        ok = !op.is_discarded() && op.contains("seq");
      }
    }
    if (!ok) {
      torn = true;
      good_bytes = static_cast<std::uint64_t>(start);
      break;
    }
    std::uint64_t seq = op.at("seq").get<std::uint64_t>();
    if (seq > last_seq) {
      last_seq = seq;
      loaded.ops.push_back(std::move(op));
    }
  }
  if (torn && ::ftruncate(fd_, static_cast<off_t>(good_bytes)) != 0) storage_error("truncate op log");
  next_seq_ = last_seq + 1;
  written_ = last_seq;
  synced_ = last_seq;
  return loaded;
}

std::uint64_t OpLog::append(nlohmann::json op) {
  const std::uint64_t seq = next_seq_++;
  op["seq"] = seq;
  std::string body = canonical_json(op);
  std::string line = fmt::format("{:08x} {}\n", crc_of(body), body);
  write_all(fd_, line);
  written_.store(seq, std::memory_order_release);
  return seq;
}

void OpLog::sync(std::uint64_t seq) {
  if (!fsync_) return;
  std::unique_lock lock(sync_mu_);
  while (synced_ < seq) {
    if (syncing_) {
      sync_cv_.wait(lock);
      continue;
    }
    syncing_ = true;
    std::uint64_t target = written_.load(std::memory_order_acquire);
    lock.unlock();
    int rc = ::fdatasync(fd_);
    lock.lock();
    syncing_ = false;
    if (rc != 0) {
      sync_cv_.notify_all();
      storage_error("op log fdatasync");
    }
    if (target > synced_) synced_ = target;
    sync_cv_.notify_all();
  }
}

void OpLog::write_snapshot(const nlohmann::json& state) {
  const std::uint64_t seq = next_seq_ - 1;
  nlohmann::json snap = {{"seq", seq}, {"state", state}};
  const auto tmp = dir_ / "snapshot.json.tmp";
  {
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) storage_error("open snapshot");
    try {
      write_all(fd, canonical_json(snap));
    } catch (...) {
      ::close(fd);
      throw;
    }
    if (fsync_ && ::fsync(fd) != 0) {
      ::close(fd);
      storage_error("fsync snapshot");
    }
    ::close(fd);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dir_ / "snapshot.json", ec);
  if (ec) throw Error(ErrorCode::kStorage, fmt::format("install snapshot: {}", ec.message()));
  if (fsync_) fsync_dir(dir_);
  if (::ftruncate(fd_, 0) != 0) storage_error("truncate op log");
}

}  // namespace ensemble
