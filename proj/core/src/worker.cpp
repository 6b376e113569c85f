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

#include "ensemble/worker.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ensemble/client.hpp"
#include "ensemble/error.hpp"
#include "ensemble/hierarchy.hpp"
#include "ensemble/ids.hpp"

namespace ensemble {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
}

std::string default_worker_id() {
  char host[256] = {0};
  ::gethostname(host, sizeof(host) - 1);
  return fmt::format("{}-{}-{}", host, ::getpid(), random_id().substr(0, 6));
}

fs::path study_root_of(const TaskEnvelope& e) {
  if (!e.payload.is_object() || !e.payload.contains("study_root") || !e.payload["study_root"].is_string()) {
    throw Error(ErrorCode::kCorruptEnvelope, fmt::format("task {} carries no study_root", e.task_id));
  }
  return e.payload["study_root"].get<std::string>();
}

bool is_active(TaskStatus s) { return s == TaskStatus::kPending || s == TaskStatus::kRunning; }

}  // namespace

std::string bundle_task_id(std::string_view study_id, std::string_view node_id, SampleRange range) {
  return stable_id({study_id, node_id, "bundle", std::to_string(range.lo), std::to_string(range.hi)});
}

std::vector<TaskEnvelope> bundle_real_tasks(const std::vector<TaskEnvelope>& reals, int bundle_size) {
  if (bundle_size <= 1) return reals;
  std::vector<TaskEnvelope> out;
  std::size_t i = 0;
  while (i < reals.size()) {
    const TaskEnvelope& first = reals[i];
    if (first.kind != TaskKind::kReal || !first.sample) {
      out.push_back(first);
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < reals.size() && j - i < static_cast<std::size_t>(bundle_size) && reals[j].kind == TaskKind::kReal &&
           reals[j].sample && *reals[j].sample == *first.sample + (j - i) && reals[j].node_id == first.node_id &&
           reals[j].study_id == first.study_id) {
      ++j;
    }
    if (j - i == 1) {
      out.push_back(first);
    } else {
      TaskEnvelope b = first;
      b.sample.reset();
      b.range = SampleRange{*first.sample, *first.sample + (j - i)};
      b.task_id = bundle_task_id(first.study_id, first.node_id, *b.range);
      out.push_back(std::move(b));
    }
    i = j;
  }
  return out;
}

TaskEnvelope make_real_envelope(const StudyContext& ctx, const StepInstance& node, std::uint64_t sample) {
  const StepDefinition* step = ctx.spec.find_step(node.step);
  TaskEnvelope e;
  e.task_id = real_task_id(ctx.study_id, node.node_id, sample);
  e.kind = TaskKind::kReal;
  e.study_id = ctx.study_id;
  e.priority = ctx.spec.run_config.task_priority_real;
  e.node_id = node.node_id;
  e.sample = sample;
  e.retries = step ? step->max_retries : 0;
  e.payload = {{"study_root", ctx.root.string()}};
  return e;
}

std::size_t advance_dependencies(BrokerClient& client, const StudyContext& ctx) {
  const BrokerStats stats = client.stats(ctx.study_id);
  const std::set<std::string> done = completed_nodes(ctx, stats.nodes);
  std::vector<TaskEnvelope> envelopes;
  for (const std::string& id : ready_frontier(ctx.dag, done)) {
    if (stats.nodes.count(id)) continue;  // already started
    envelopes.push_back(node_root_envelope(ctx, ctx.dag.node(id)));
  }
  if (envelopes.empty()) return 0;
  return client.enqueue(envelopes).accepted;
}

std::size_t resubmit(BrokerClient& client, std::string_view study_id, ResubmitScope scope) {
  if (scope == ResubmitScope::kFailed) return client.revive_dead(study_id);

  const BrokerStats stats = client.stats(std::string(study_id), true);
  if (!stats.known_study || stats.study_root.empty()) {
    throw Error(ErrorCode::kUnknownStudy, fmt::format("unknown study '{}'", study_id));
  }
  auto ctx = load_study(stats.study_root);

  // Samples already queued or running, directly or through a pending range.
  std::map<std::string, std::vector<SampleRange>> active;
  std::set<std::string> active_once;
  for (const TaskRecord& r : stats.records) {
    if (!is_active(r.status)) continue;
    if (r.kind == TaskKind::kStepOnce) active_once.insert(r.node_id);
    if (r.sample) active[r.node_id].push_back({*r.sample, *r.sample + 1});
    if (r.range) active[r.node_id].push_back(*r.range);
  }
  auto covered = [&](const std::string& node, std::uint64_t s) {
    auto it = active.find(node);
    if (it == active.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(),
                       [&](const SampleRange& r) { return s >= r.lo && s < r.hi; });
  };
  auto has_marker = [](const fs::path& ws) {
    auto code = read_done_marker(ws);
    return code && *code == 0;
  };

  std::vector<TaskEnvelope> envelopes;
  for (const StepInstance& node : ctx->dag.nodes()) {
    if (!stats.nodes.count(node.node_id)) continue;  // never started
    if (!node.sample_scoped) {
      if (!active_once.count(node.node_id) && !has_marker(task_workspace(*ctx, node, std::nullopt))) {
        envelopes.push_back(node_root_envelope(*ctx, node));
      }
      continue;
    }
    for (std::uint64_t s = 0; s < ctx->n(); ++s) {
      if (covered(node.node_id, s) || has_marker(task_workspace(*ctx, node, s))) continue;
      envelopes.push_back(make_real_envelope(*ctx, node, s));
    }
  }
  if (envelopes.empty()) return 0;
  return client.enqueue(envelopes, true).accepted;
}

WorkerPool::WorkerPool(WorkerConfig config, WorkerObserver* observer)
    : config_(std::move(config)), observer_(observer) {
  if (config_.concurrency < 1) throw Error(ErrorCode::kConfig, "worker concurrency must be at least 1");
  if (config_.bundle_size < 1) throw Error(ErrorCode::kConfig, "bundle size must be at least 1");
  if (config_.worker_id.empty()) config_.worker_id = default_worker_id();
  exec_options_.worker_id = config_.worker_id;
  exec_options_.broker_endpoint = config_.broker ? std::string(kLocalEndpoint) : config_.broker_endpoint;
  exec_options_.workspace_root = config_.workspace_root;
  exec_options_.exe_path = config_.exe_path;
  exec_options_.output_cap = config_.output_cap;
}

std::unique_ptr<BrokerClient> WorkerPool::make_client() const {
  if (config_.broker) return make_local_client(config_.broker);
  return connect_broker(config_.broker_endpoint);
}

WorkerSummary WorkerPool::run() {
  last_activity_ns_ = steady_ns();
  std::vector<std::thread> slots;
  slots.reserve(static_cast<std::size_t>(config_.concurrency));
  for (int i = 0; i < config_.concurrency; ++i) slots.emplace_back([this, i] { slot_loop(i); });

  std::thread heartbeat;
  std::mutex hb_mu;
  std::condition_variable hb_cv;
  bool hb_done = false;
  if (!config_.workspace_root.empty()) {
    heartbeat = std::thread([&] {
      std::unique_lock lock(hb_mu);
      while (!hb_done) {
        lock.unlock();
        write_heartbeat(false);
        lock.lock();
        hb_cv.wait_for(lock, config_.heartbeat_interval, [&] { return hb_done; });
      }
    });
  }
  for (std::thread& t : slots) t.join();
  if (heartbeat.joinable()) {
    {
      std::lock_guard lock(hb_mu);
      hb_done = true;
    }
    hb_cv.notify_all();
    heartbeat.join();
    write_heartbeat(true);
  }
  std::lock_guard lock(summary_mu_);
  return summary_;
}

void WorkerPool::write_heartbeat(bool final) {
  try {
    const fs::path dir = config_.workspace_root / ".workers";
    fs::create_directories(dir);
    WorkerSummary s;
    {
      std::lock_guard lock(summary_mu_);
      s = summary_;
    }
    json hb = {{"worker_id", config_.worker_id},
               {"pid", ::getpid()},
               {"slots", config_.concurrency},
               {"busy", busy_.load()},
               {"processed", s.processed},
               {"state", final ? "stopped" : "running"},
               {"updated", format_micros(now_micros())}};
    const fs::path path = dir / (config_.worker_id + ".json");
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << canonical_json(hb) << "\n";
    }
    fs::rename(tmp, path);
  } catch (const std::exception& e) {
    spdlog::debug("heartbeat write failed: {}", e.what());
  }
}

bool WorkerPool::should_stop(BrokerClient& client) {
  if (stop_ || (config_.stop_flag && config_.stop_flag->load())) return true;
  if (busy_.load() > 0) return false;
  if (config_.idle_exit) {
    auto idle = std::chrono::nanoseconds(steady_ns() - last_activity_ns_.load());
    if (idle >= *config_.idle_exit) return true;
  }
  if (config_.exit_when_drained) {
    // Deliveries counted before and after the stats call.
    const std::uint64_t seen = deliveries_.load();
    BrokerStats s = client.stats(std::nullopt);
    if (s.ready == 0 && s.unacked == 0 && busy_.load() == 0 && deliveries_.load() == seen) return true;
  }
  return false;
}

void WorkerPool::slot_loop(int slot) {
  const std::string consumer = fmt::format("{}/{}", config_.worker_id, slot);
  std::unique_ptr<BrokerClient> client;
  int failures = 0;
  while (!stop_) {
    try {
      if (!client) client = make_client();
      if (should_stop(*client)) break;
      std::optional<Delivery> d = client->consume(consumer, config_.poll_timeout);
      failures = 0;
      if (!d) continue;
      const SteadyTime received = Clock::now();
      ++busy_;
      ++deliveries_;
      last_activity_ns_ = steady_ns();
      try {
        handle(*client, *d, received);
      } catch (...) {
        --busy_;
        last_activity_ns_ = steady_ns();
        throw;
      }
      --busy_;
      last_activity_ns_ = steady_ns();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBrokerUnreachable) {
        spdlog::error("[{}] {}", consumer, e.what());
        continue;
      }
      client.reset();
      if (++failures >= config_.max_unreachable) {
        spdlog::error("[{}] giving up: {}", consumer, e.what());
        std::lock_guard lock(summary_mu_);
        summary_.unreachable = true;
        stop_ = true;
        break;
      }
      auto backoff = std::chrono::milliseconds(std::min(2000, 50 << std::min(failures, 6)));
      spdlog::warn("[{}] {}; retrying in {} ms", consumer, e.what(), backoff.count());
      std::this_thread::sleep_for(backoff);
    }
  }
}

void WorkerPool::handle(BrokerClient& client, const Delivery& delivery, SteadyTime received) {
  {
    std::lock_guard lock(summary_mu_);
    ++summary_.processed;
  }
  if (delivery.envelope.kind == TaskKind::kGeneration) {
    handle_generation(client, delivery);
  } else {
    handle_execution(client, delivery, received);
  }
}

void WorkerPool::handle_generation(BrokerClient& client, const Delivery& delivery) {
  const TaskEnvelope& task = delivery.envelope;
  std::shared_ptr<const StudyContext> ctx;
  try {
    ctx = studies_.get(study_root_of(task));
    std::vector<TaskEnvelope> children = expand_generation_task(task, plan_from_payload(task));
    if (config_.bundle_size > 1) children = bundle_real_tasks(children, config_.bundle_size);
    if (!children.empty()) client.enqueue(children);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBrokerUnreachable) throw;
    spdlog::error("generation task {} failed: {}", task.task_id, e.what());
    client.ack(delivery.tag, AckOutcome{false, 1, json{{"error", e.what()}}});
    std::lock_guard lock(summary_mu_);
    ++summary_.failed;
    return;
  }
  AckResult ack = client.ack(delivery.tag, AckOutcome{true, 0, json()});
  {
    std::lock_guard lock(summary_mu_);
    ++summary_.generation;
  }
  after_success(client, ack, *ctx);
}

void WorkerPool::handle_execution(BrokerClient& client, const Delivery& delivery, SteadyTime received) {
  const TaskEnvelope& task = delivery.envelope;
  std::vector<ExecutionResult> results;
  AckOutcome outcome;
  std::shared_ptr<const StudyContext> ctx;
  try {
    ctx = studies_.get(study_root_of(task));
    if (observer_) observer_->on_execute_begin(task, Clock::now());
    results = execute_bundle(task, *ctx, exec_options_, received);
    outcome.success = std::all_of(results.begin(), results.end(), [](const ExecutionResult& r) { return r.ok(); });
    outcome.exit_code = 0;
    json statuses = json::array();
    for (const ExecutionResult& r : results) {
      if (!r.ok() && outcome.exit_code == 0) outcome.exit_code = r.exit_code;
      if (task.is_bundle()) statuses.push_back({{"sample", *r.sample}, {"exit_code", r.exit_code}});
    }
    if (task.is_bundle()) outcome.detail = {{"samples", statuses}};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBrokerUnreachable) throw;
    spdlog::error("task {} failed: {}", task.task_id, e.what());
    outcome = AckOutcome{false, 127, json{{"error", e.what()}}};
  }
  AckResult ack = client.ack(delivery.tag, outcome);
  double child_wall = 0.0;
  for (const ExecutionResult& r : results) child_wall += r.wall_time;
  const double overhead =
      std::max(0.0, std::chrono::duration<double>(Clock::now() - received).count() - child_wall);
  {
    std::lock_guard lock(summary_mu_);
    ++summary_.executed;
    if (!outcome.success) ++summary_.failed;
  }
  if (observer_) observer_->on_task_done(task, results, overhead);
  if (outcome.success && ctx) after_success(client, ack, *ctx);
}

void WorkerPool::after_success(BrokerClient& client, const AckResult& ack, const StudyContext& ctx) {
  const StepInstance* node = ctx.dag.find(ack.node_id);
  if (!node || !node_complete(ctx, *node, ack.progress)) return;
  if (ctx.dag.successors(node->node_id).empty()) return;
  std::size_t n = advance_dependencies(client, ctx);
  std::lock_guard lock(summary_mu_);
  summary_.dependents_enqueued += n;
}

}  // namespace ensemble
