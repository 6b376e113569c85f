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
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ensemble/broker.hpp"
#include "ensemble/executor.hpp"
#include "ensemble/study.hpp"

namespace ensemble {

class BrokerClient;

struct WorkerConfig {
  std::string worker_id;  // generated when empty
  std::string broker_endpoint{"local:"};
  /// In-process broker; takes precedence over the endpoint when set.
  std::shared_ptr<Broker> broker;
  int concurrency = 1;
  int bundle_size = 1;
  std::chrono::milliseconds poll_timeout{200};
  /// Exit after this long with every slot idle.
  std::optional<std::chrono::milliseconds> idle_exit;
  /// Exit once the broker holds no ready or unacked work.
  bool exit_when_drained = false;
  std::filesystem::path workspace_root;
  std::filesystem::path exe_path;
  std::uint64_t output_cap = 16u << 20;
  /// Consecutive failed broker calls per slot before the pool gives up.
  int max_unreachable = 20;
  std::chrono::milliseconds heartbeat_interval{2000};
  /// Polled by every slot; set from a signal handler to drain and exit.
  const std::atomic<bool>* stop_flag = nullptr;
};

using SteadyTime = std::chrono::steady_clock::time_point;

/// Timing hooks for benchmarks and tests. Called from slot threads.
class WorkerObserver {
 public:
  virtual ~WorkerObserver() = default;
  virtual void on_execute_begin(const TaskEnvelope& /*envelope*/, SteadyTime /*at*/) {}
  /// `overhead` is receipt to completed ack, minus child wall time.
  virtual void on_task_done(const TaskEnvelope& /*envelope*/,
                            const std::vector<ExecutionResult>& /*results*/, double /*overhead*/) {}
};

struct WorkerSummary {
  std::uint64_t processed = 0;
  std::uint64_t generation = 0;
  std::uint64_t executed = 0;
  std::uint64_t failed = 0;
  std::uint64_t dependents_enqueued = 0;
  bool unreachable = false;
};

class WorkerPool {
 public:
  explicit WorkerPool(WorkerConfig config, WorkerObserver* observer = nullptr);

  /// Blocks until stopped, idle, drained, or the broker stays unreachable.
  WorkerSummary run();

  /// Slots finish their current task and exit.
  void request_stop() { stop_ = true; }

  const std::string& worker_id() const { return config_.worker_id; }

 private:
  void slot_loop(int slot);
  void handle(BrokerClient& client, const Delivery& delivery, SteadyTime received);
  void handle_generation(BrokerClient& client, const Delivery& delivery);
  void handle_execution(BrokerClient& client, const Delivery& delivery, SteadyTime received);
  void after_success(BrokerClient& client, const AckResult& ack, const StudyContext& ctx);
  bool should_stop(BrokerClient& client);
  void write_heartbeat(bool final);
  std::unique_ptr<BrokerClient> make_client() const;

  WorkerConfig config_;
  WorkerObserver* observer_;
  ExecutorOptions exec_options_;
  StudyCache studies_;

  std::atomic<bool> stop_{false};
  std::atomic<int> busy_{0};
  std::atomic<std::uint64_t> deliveries_{0};
  std::atomic<std::int64_t> last_activity_ns_{0};

  std::mutex summary_mu_;
  WorkerSummary summary_;
};

std::string bundle_task_id(std::string_view study_id, std::string_view node_id, SampleRange range);

/// Groups consecutive real envelopes of one node into bundles of up to
/// `bundle_size` samples. Size 1 returns the input unchanged.
std::vector<TaskEnvelope> bundle_real_tasks(const std::vector<TaskEnvelope>& reals, int bundle_size);

/// Real envelope for one sample of a sample-scoped node.
TaskEnvelope make_real_envelope(const StudyContext& ctx, const StepInstance& node, std::uint64_t sample);

/// Enqueues the root envelope of every node whose predecessors are all
/// complete and which has not been started. Returns envelopes accepted.
std::size_t advance_dependencies(BrokerClient& client, const StudyContext& ctx);

enum class ResubmitScope { kFailed, kMissing };

/// failed: revives dead tasks. missing: re-enqueues tasks of started nodes
/// whose workspace lacks a success marker and which are not queued or
/// running. kUnknownStudy when the broker has never seen the study.
std::size_t resubmit(BrokerClient& client, std::string_view study_id, ResubmitScope scope);

}  // namespace ensemble
