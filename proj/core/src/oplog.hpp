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

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace ensemble {

/// Append-only operation log plus snapshot for the broker.
///
/// Layout under the data directory:
///   ops.log        one op per line: "<crc32 hex> <canonical json>\n"
///   snapshot.json  {"seq": <last op folded in>, "state": {...}}
///
/// Every op carries a "seq". Replay skips ops already folded into the
/// snapshot and stops at the first torn or corrupt line, truncating it away.
class OpLog {
 public:
  OpLog(std::filesystem::path dir, bool fsync);
  ~OpLog();

  OpLog(const OpLog&) = delete;
  OpLog& operator=(const OpLog&) = delete;

  struct Loaded {
    std::optional<nlohmann::json> state;
    std::vector<nlohmann::json> ops;
  };

  Loaded load();

  /// Writes one op; the caller serializes appends. Returns its seq.
  std::uint64_t append(nlohmann::json op);

  /// Blocks until `seq` is on stable storage. Concurrent callers share one
  /// fdatasync (group commit).
  void sync(std::uint64_t seq);

  /// Persists `state` as covering every op appended so far, then empties
  /// the log. The caller serializes this with append().
  void write_snapshot(const nlohmann::json& state);

 private:
  std::filesystem::path dir_;
  bool fsync_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 1;
  std::atomic<std::uint64_t> written_{0};

  std::mutex sync_mu_;
  std::condition_variable sync_cv_;
  bool syncing_ = false;
  std::uint64_t synced_ = 0;
};

}  // namespace ensemble
