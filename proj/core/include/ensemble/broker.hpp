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
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ensemble/envelope.hpp"

namespace ensemble {

enum class TaskStatus { kPending, kRunning, kSucceeded, kFailed, kDead };

std::string_view task_status_name(TaskStatus status);
TaskStatus task_status_from_name(std::string_view name);

/// Durable per-task status. `attempt` counts deliveries.
struct TaskRecord {
  std::string task_id;
  TaskKind kind = TaskKind::kReal;
  std::string study_id;
  std::string node_id;
  TaskStatus status = TaskStatus::kPending;
  int attempt = 0;
  int max_retries = 0;
  std::int64_t enqueued_us = 0;
  std::optional<std::int64_t> started_us;
  std::optional<std::int64_t> finished_us;
  std::string worker_id;
  std::optional<int> exit_code;
  std::optional<std::uint64_t> sample;
  std::optional<SampleRange> range;
  std::uint64_t samples = 0;  // samples a real task covers (1, or a bundle's width)
  nlohmann::json detail;      // outcome detail sent with the ack
  std::optional<TaskEnvelope> parked;  // kept while dead, for resubmission

  bool operator==(const TaskRecord&) const = default;
};

nlohmann::json record_to_json(const TaskRecord& r);
TaskRecord record_from_json(const nlohmann::json& j);

/// Monotonic event counters. At every quiescent point
/// enqueued == succeeded + dead + ready + unacked.
struct BrokerCounters {
  std::uint64_t enqueued = 0;
  std::uint64_t delivered = 0;
  std::uint64_t acked = 0;
  std::uint64_t succeeded = 0;
  std::uint64_t failed = 0;  // failure acks, including ones that were retried
  std::uint64_t dead = 0;    // retries exhausted, or purged while ready
  std::uint64_t requeued = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t purged = 0;

  bool operator==(const BrokerCounters&) const = default;
};

/// Aggregates for one (study, DAG node): record counts keyed "<kind>.<status>"
/// and the number of samples covered by succeeded real tasks.
struct NodeProgress {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t samples_succeeded = 0;

  std::uint64_t count(TaskKind kind, TaskStatus status) const;
  bool operator==(const NodeProgress&) const = default;
};

struct BrokerStats {
  BrokerCounters counters;
  std::map<std::string, std::uint64_t> status_counts;
  std::uint64_t ready = 0;
  std::uint64_t unacked = 0;
  bool known_study = false;
  std::string study_root;
  std::map<std::string, NodeProgress> nodes;
  std::vector<TaskRecord> records;
  std::vector<std::string> studies;
};

nlohmann::json stats_to_json(const BrokerStats& s);
BrokerStats stats_from_json(const nlohmann::json& j);
nlohmann::json progress_to_json(const NodeProgress& p);
NodeProgress progress_from_json(const nlohmann::json& j);

struct Delivery {
  std::uint64_t tag = 0;
  TaskEnvelope envelope;
};

struct AckOutcome {
  bool success = true;
  int exit_code = 0;
  nlohmann::json detail;
};

struct AckResult {
  std::string study_id;
  std::string node_id;
  TaskStatus status = TaskStatus::kSucceeded;
  NodeProgress progress;
};

struct EnqueueResult {
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
};

struct BrokerOptions {
  /// Empty: in-memory only. Otherwise an op log and snapshots live here and
  /// state is recovered on construction.
  std::filesystem::path data_dir;
  bool fsync = true;
  std::chrono::milliseconds lease{std::chrono::minutes(10)};
  std::size_t message_limit = 64u * 1024 * 1024;
  std::size_t snapshot_every = 50000;  // logged ops between snapshots
};

class OpLog;

/// Priority queue with leases and per-task records.
///
/// Higher priority is served first, FIFO within a priority. Delivered
/// envelopes stay unacked until ack/nack or until their lease expires.
/// Enqueues of an already-known task_id are dropped (counted as duplicates)
/// unless `force` is set and the task is finished, which is how resubmission
/// reruns completed work. All mutations are serialized by one mutex; with a
/// data_dir every mutation is appended to the op log and synced before the
/// call returns.
class Broker {
 public:
  explicit Broker(BrokerOptions options = {});
  ~Broker();

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  /// All-or-nothing size check, then insertion. kMessageTooLarge, kStorage.
  EnqueueResult enqueue(std::vector<TaskEnvelope> envelopes, bool force = false);

  /// Waits up to `timeout` for work. Returns nullopt on timeout or shutdown.
  std::optional<Delivery> consume(std::string_view consumer_id,
                                  std::chrono::milliseconds timeout);

  /// kUnknownTag when the tag is not (or no longer) unacked.
  AckResult ack(std::uint64_t tag, const AckOutcome& outcome);

  /// Returns the envelope to the ready queue without consuming a retry.
  void nack(std::uint64_t tag);

  /// Returns unacked entries older than `lease` to the ready queue.
  std::size_t requeue_expired(std::chrono::milliseconds lease);

  /// Re-enqueues every dead task of a study with its retries restored.
  /// kUnknownStudy when the study has never been seen.
  std::size_t revive_dead(std::string_view study_id);

  BrokerStats stats(const std::optional<std::string>& study_id,
                    bool include_records = false) const;

  /// Drops ready envelopes in scope (marking them dead). Unacked work is
  /// left to finish or expire.
  std::size_t purge(const std::optional<std::string>& study_id);

  /// Writes a snapshot and truncates the op log (no-op when in-memory).
  void checkpoint();

  /// Wakes blocked consumers; later consumes return immediately.
  void shutdown();

  const BrokerOptions& options() const { return options_; }

 private:
  struct ReadyKey {
    std::int64_t neg_priority;
    std::uint64_t order;
    auto operator<=>(const ReadyKey&) const = default;
  };
  struct Inflight {
    TaskEnvelope envelope;
    std::string consumer;
    std::int64_t delivered_us = 0;
  };
  struct StudyState {
    BrokerCounters counters;
    std::string root;
    std::map<std::string, NodeProgress> nodes;
    std::vector<std::string> task_ids;
    std::uint64_t ready = 0;
    std::uint64_t unacked = 0;
  };

  // apply_* mutate state only; callers hold mu_ and log the op.
  EnqueueResult apply_enqueue(std::vector<TaskEnvelope> envelopes, bool force, std::int64_t now);
  std::optional<Delivery> apply_consume(const std::string& consumer, std::int64_t now);
  AckResult apply_ack(std::uint64_t tag, const AckOutcome& outcome, std::int64_t now);
  void apply_nack(std::uint64_t tag);
  std::size_t apply_requeue(std::int64_t now, std::int64_t lease_us);
  std::size_t apply_revive(const std::string& study_id);
  std::size_t apply_purge(const std::optional<std::string>& study_id);
  void apply_op(const nlohmann::json& op);

  void push_ready(TaskEnvelope envelope);
  void set_status(TaskRecord& record, TaskStatus status);
  StudyState& study(const std::string& study_id);
  void maybe_sweep_locked(std::int64_t now);

  std::uint64_t log_locked(nlohmann::json op);
  void sync(std::uint64_t seq);
  nlohmann::json state_to_json() const;
  void state_from_json(const nlohmann::json& j);
  void recover();
  void snapshot_locked();

  BrokerOptions options_;
  std::unique_ptr<OpLog> log_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool shutdown_ = false;
  std::map<ReadyKey, TaskEnvelope> ready_;
  std::map<std::uint64_t, Inflight> unacked_;
  std::unordered_map<std::string, TaskRecord> records_;
  std::map<std::string, StudyState> studies_;
  BrokerCounters counters_;
  std::uint64_t next_tag_ = 1;
  std::uint64_t next_order_ = 0;
  std::uint64_t ops_since_snapshot_ = 0;
  std::int64_t last_sweep_us_ = 0;
};

}  // namespace ensemble
