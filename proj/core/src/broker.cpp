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

#include "ensemble/broker.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ensemble/error.hpp"
#include "ensemble/ids.hpp"
#include "oplog.hpp"

namespace ensemble {
namespace {

using json = nlohmann::json;

std::string progress_key(TaskKind kind, TaskStatus status) {
  return fmt::format("{}.{}", task_kind_name(kind), task_status_name(status));
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json();
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json counters_to_json(const BrokerCounters& c) {
  return {{"enqueued", c.enqueued}, {"delivered", c.delivered}, {"acked", c.acked},
          {"succeeded", c.succeeded}, {"failed", c.failed},     {"dead", c.dead},
          {"requeued", c.requeued},   {"duplicates", c.duplicates}, {"purged", c.purged}};
}

BrokerCounters counters_from_json(const json& j) {
  BrokerCounters c;
  c.enqueued = j.value("enqueued", std::uint64_t{0});
  c.delivered = j.value("delivered", std::uint64_t{0});
  c.acked = j.value("acked", std::uint64_t{0});
  c.succeeded = j.value("succeeded", std::uint64_t{0});
  c.failed = j.value("failed", std::uint64_t{0});
  c.dead = j.value("dead", std::uint64_t{0});
  c.requeued = j.value("requeued", std::uint64_t{0});
  c.duplicates = j.value("duplicates", std::uint64_t{0});
  c.purged = j.value("purged", std::uint64_t{0});
  return c;
}

}  // namespace

std::string_view task_status_name(TaskStatus status) {
  switch (status) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kRunning: return "running";
    case TaskStatus::kSucceeded: return "succeeded";
    case TaskStatus::kFailed: return "failed";
    case TaskStatus::kDead: return "dead";
  }
  return "pending";
}

TaskStatus task_status_from_name(std::string_view name) {
  if (name == "pending") return TaskStatus::kPending;
  if (name == "running") return TaskStatus::kRunning;
  if (name == "succeeded") return TaskStatus::kSucceeded;
  if (name == "failed") return TaskStatus::kFailed;
  if (name == "dead") return TaskStatus::kDead;
  throw Error(ErrorCode::kProtocol, fmt::format("unknown task status '{}'", name));
}

std::uint64_t NodeProgress::count(TaskKind kind, TaskStatus status) const {
  auto it = counts.find(progress_key(kind, status));
  return it == counts.end() ? 0 : it->second;
}

json record_to_json(const TaskRecord& r) {
  return {{"task_id", r.task_id},
          {"kind", task_kind_name(r.kind)},
          {"study_id", r.study_id},
          {"node_id", r.node_id},
          {"status", task_status_name(r.status)},
          {"attempt", r.attempt},
          {"max_retries", r.max_retries},
          {"enqueued_us", r.enqueued_us},
          {"started_us", optional_json(r.started_us)},
          {"finished_us", optional_json(r.finished_us)},
          {"worker_id", r.worker_id},
          {"exit_code", optional_json(r.exit_code)},
          {"sample", optional_json(r.sample)},
          {"range", r.range ? json::array({r.range->lo, r.range->hi}) : json()},
          {"samples", r.samples},
          {"detail", r.detail},
          {"parked", r.parked ? envelope_to_json(*r.parked) : json()}};
}

TaskRecord record_from_json(const json& j) {
  try {
    TaskRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.kind = task_kind_from_name(j.at("kind").get<std::string>());
    r.study_id = j.at("study_id").get<std::string>();
    r.node_id = j.at("node_id").get<std::string>();
    r.status = task_status_from_name(j.at("status").get<std::string>());
    r.attempt = j.at("attempt").get<int>();
    r.max_retries = j.at("max_retries").get<int>();
    r.enqueued_us = j.at("enqueued_us").get<std::int64_t>();
    r.started_us = optional_from<std::int64_t>(j, "started_us");
    r.finished_us = optional_from<std::int64_t>(j, "finished_us");
    r.worker_id = j.at("worker_id").get<std::string>();
    r.exit_code = optional_from<int>(j, "exit_code");
    r.sample = optional_from<std::uint64_t>(j, "sample");
    if (j.contains("range") && !j.at("range").is_null()) {
      r.range = SampleRange{j.at("range").at(0).get<std::uint64_t>(),
                            j.at("range").at(1).get<std::uint64_t>()};
    }
    r.samples = j.at("samples").get<std::uint64_t>();
    r.detail = j.value("detail", json());
    if (j.contains("parked") && !j.at("parked").is_null()) {
      r.parked = envelope_from_json(j.at("parked"));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocol, fmt::format("malformed task record: {}", e.what()));
  }
}

json progress_to_json(const NodeProgress& p) {
  return {{"counts", p.counts}, {"samples_succeeded", p.samples_succeeded}};
}

NodeProgress progress_from_json(const json& j) {
  NodeProgress p;
  p.counts = j.at("counts").get<std::map<std::string, std::uint64_t>>();
  p.samples_succeeded = j.at("samples_succeeded").get<std::uint64_t>();
  return p;
}

json stats_to_json(const BrokerStats& s) {
  json nodes = json::object();
  for (const auto& [id, p] : s.nodes) nodes[id] = progress_to_json(p);
  json records = json::array();
  for (const TaskRecord& r : s.records) records.push_back(record_to_json(r));
  return {{"counters", counters_to_json(s.counters)},
          {"status_counts", s.status_counts},
          {"ready", s.ready},
          {"unacked", s.unacked},
          {"known_study", s.known_study},
          {"study_root", s.study_root},
          {"nodes", nodes},
          {"records", records},
          {"studies", s.studies}};
}

BrokerStats stats_from_json(const json& j) {
  try {
    BrokerStats s;
    s.counters = counters_from_json(j.at("counters"));
    s.status_counts = j.at("status_counts").get<std::map<std::string, std::uint64_t>>();
    s.ready = j.at("ready").get<std::uint64_t>();
    s.unacked = j.at("unacked").get<std::uint64_t>();
    s.known_study = j.at("known_study").get<bool>();
    s.study_root = j.at("study_root").get<std::string>();
    for (const auto& [id, p] : j.at("nodes").items()) s.nodes[id] = progress_from_json(p);
    for (const auto& r : j.at("records")) s.records.push_back(record_from_json(r));
    s.studies = j.at("studies").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocol, fmt::format("malformed stats: {}", e.what()));
  }
}

Broker::Broker(BrokerOptions options) : options_(std::move(options)) {
  if (!options_.data_dir.empty()) {
    log_ = std::make_unique<OpLog>(options_.data_dir, options_.fsync);
    recover();
  }
}

Broker::~Broker() {
  shutdown();
  if (log_) {
    try {
      std::lock_guard lock(mu_);
      snapshot_locked();
    } catch (const std::exception& e) {
      spdlog::warn("final broker snapshot failed: {}", e.what());
    }
  }
}

Broker::StudyState& Broker::study(const std::string& study_id) { return studies_[study_id]; }

void Broker::push_ready(TaskEnvelope envelope) {
  StudyState& st = study(envelope.study_id);
  ++st.ready;
  ReadyKey key{-static_cast<std::int64_t>(envelope.priority), next_order_++};
  ready_.emplace(key, std::move(envelope));
}

void Broker::set_status(TaskRecord& record, TaskStatus status) {
  NodeProgress& progress = study(record.study_id).nodes[record.node_id];
  auto& old_count = progress.counts[progress_key(record.kind, record.status)];
  if (old_count > 0) --old_count;
  if (old_count == 0) progress.counts.erase(progress_key(record.kind, record.status));
  if (record.kind == TaskKind::kReal && record.status == TaskStatus::kSucceeded) {
    progress.samples_succeeded -= std::min(progress.samples_succeeded, record.samples);
  }
  record.status = status;
  ++progress.counts[progress_key(record.kind, status)];
  if (record.kind == TaskKind::kReal && status == TaskStatus::kSucceeded) {
    progress.samples_succeeded += record.samples;
  }
}

EnqueueResult Broker::apply_enqueue(std::vector<TaskEnvelope> envelopes, bool force,
                                    std::int64_t now) {
  EnqueueResult result;
  for (TaskEnvelope& e : envelopes) {
    StudyState& st = study(e.study_id);
    if (st.root.empty() && e.payload.contains("study_root") && e.payload["study_root"].is_string()) {
      st.root = e.payload["study_root"].get<std::string>();
    }
    auto it = records_.find(e.task_id);
    if (it != records_.end()) {
      TaskRecord& r = it->second;
      bool finished = r.status == TaskStatus::kSucceeded || r.status == TaskStatus::kDead ||
                      r.status == TaskStatus::kFailed;
      if (!force || !finished) {
        ++result.duplicates;
        ++counters_.duplicates;
        ++st.counters.duplicates;
        continue;
      }
      r.enqueued_us = now;
      r.started_us.reset();
      r.finished_us.reset();
      r.exit_code.reset();
      r.detail = json();
      r.parked.reset();
      r.max_retries = e.retries;
      set_status(r, TaskStatus::kPending);
    } else {
      TaskRecord r;
      r.task_id = e.task_id;
      r.kind = e.kind;
      r.study_id = e.study_id;
      r.node_id = e.node_id;
      r.status = TaskStatus::kPending;
      r.max_retries = e.retries;
      r.enqueued_us = now;
      r.sample = e.sample;
      r.range = e.kind == TaskKind::kGeneration || e.is_bundle() ? e.range : std::nullopt;
      r.samples = e.kind == TaskKind::kReal ? e.sample_count() : 0;
      st.task_ids.push_back(e.task_id);
      ++st.nodes[e.node_id].counts[progress_key(r.kind, r.status)];
      records_.emplace(e.task_id, std::move(r));
    }
    ++result.accepted;
    ++counters_.enqueued;
    ++st.counters.enqueued;
    push_ready(std::move(e));
  }
  return result;
}

std::optional<Delivery> Broker::apply_consume(const std::string& consumer, std::int64_t now) {
  if (ready_.empty()) return std::nullopt;
  auto first = ready_.begin();
  Delivery d{next_tag_++, std::move(first->second)};
  ready_.erase(first);
  StudyState& st = study(d.envelope.study_id);
  --st.ready;
  ++st.unacked;
  ++st.counters.delivered;
  ++counters_.delivered;
  TaskRecord& r = records_.at(d.envelope.task_id);
  ++r.attempt;
  r.started_us = now;
  r.finished_us.reset();
  r.worker_id = consumer;
  set_status(r, TaskStatus::kRunning);
  unacked_.emplace(d.tag, Inflight{d.envelope, consumer, now});
  return d;
}

AckResult Broker::apply_ack(std::uint64_t tag, const AckOutcome& outcome, std::int64_t now) {
  auto it = unacked_.find(tag);
  if (it == unacked_.end()) throw Error(ErrorCode::kUnknownTag, fmt::format("delivery tag {} is not outstanding", tag));
  TaskEnvelope envelope = std::move(it->second.envelope);
  unacked_.erase(it);
  StudyState& st = study(envelope.study_id);
  --st.unacked;
  ++st.counters.acked;
  ++counters_.acked;
  TaskRecord& r = records_.at(envelope.task_id);
  r.finished_us = now;
  r.exit_code = outcome.exit_code;
  r.detail = outcome.detail;
  if (outcome.success) {
    ++st.counters.succeeded;
    ++counters_.succeeded;
    set_status(r, TaskStatus::kSucceeded);
  } else {
    ++st.counters.failed;
    ++counters_.failed;
    if (envelope.retries > 0) {
      --envelope.retries;
      set_status(r, TaskStatus::kPending);
      push_ready(std::move(envelope));
    } else {
      ++st.counters.dead;
      ++counters_.dead;
      set_status(r, TaskStatus::kDead);
      r.parked = std::move(envelope);
    }
  }
  return AckResult{r.study_id, r.node_id, r.status, st.nodes[r.node_id]};
}

void Broker::apply_nack(std::uint64_t tag) {
  auto it = unacked_.find(tag);
  if (it == unacked_.end()) throw Error(ErrorCode::kUnknownTag, fmt::format("delivery tag {} is not outstanding", tag));
  TaskEnvelope envelope = std::move(it->second.envelope);
  unacked_.erase(it);
  --study(envelope.study_id).unacked;
  set_status(records_.at(envelope.task_id), TaskStatus::kPending);
  push_ready(std::move(envelope));
}

std::size_t Broker::apply_requeue(std::int64_t now, std::int64_t lease_us) {
  std::size_t count = 0;
  for (auto it = unacked_.begin(); it != unacked_.end();) {
    if (now - it->second.delivered_us < lease_us) {
      ++it;
      continue;
    }
    TaskEnvelope envelope = std::move(it->second.envelope);
    it = unacked_.erase(it);
    StudyState& st = study(envelope.study_id);
    --st.unacked;
    ++st.counters.requeued;
    ++counters_.requeued;
    set_status(records_.at(envelope.task_id), TaskStatus::kPending);
    push_ready(std::move(envelope));
    ++count;
  }
  return count;
}

std::size_t Broker::apply_revive(const std::string& study_id) {
  auto sit = studies_.find(study_id);
  if (sit == studies_.end()) throw Error(ErrorCode::kUnknownStudy, fmt::format("unknown study '{}'", study_id));
  std::size_t count = 0;
  for (const std::string& id : sit->second.task_ids) {
    TaskRecord& r = records_.at(id);
    if (r.status != TaskStatus::kDead || !r.parked) continue;
    TaskEnvelope envelope = std::move(*r.parked);
    r.parked.reset();
    envelope.retries = r.max_retries;
    r.exit_code.reset();
    r.finished_us.reset();
    set_status(r, TaskStatus::kPending);
    ++sit->second.counters.enqueued;
    ++counters_.enqueued;
    push_ready(std::move(envelope));
    ++count;
  }
  return count;
}

std::size_t Broker::apply_purge(const std::optional<std::string>& study_id) {
  std::size_t count = 0;
  for (auto it = ready_.begin(); it != ready_.end();) {
    if (study_id && it->second.study_id != *study_id) {
      ++it;
      continue;
    }
    TaskEnvelope envelope = std::move(it->second);
    it = ready_.erase(it);
    StudyState& st = study(envelope.study_id);
    --st.ready;
    ++st.counters.dead;
    ++st.counters.purged;
    ++counters_.dead;
    ++counters_.purged;
    TaskRecord& r = records_.at(envelope.task_id);
    set_status(r, TaskStatus::kDead);
    r.parked = std::move(envelope);
    ++count;
  }
  return count;
}

void Broker::apply_op(const json& op) {
  const std::string name = op.at("op").get<std::string>();
  const std::int64_t t = op.at("t").get<std::int64_t>();
  if (name == "enqueue") {
    std::vector<TaskEnvelope> envelopes;
    for (const auto& e : op.at("envelopes")) envelopes.push_back(envelope_from_json(e));
    apply_enqueue(std::move(envelopes), op.at("force").get<bool>(), t);
  } else if (name == "consume") {
    apply_consume(op.at("consumer").get<std::string>(), t);
  } else if (name == "ack") {
    AckOutcome outcome{op.at("success").get<bool>(), op.at("exit_code").get<int>(),
                       op.value("detail", json())};
    apply_ack(op.at("tag").get<std::uint64_t>(), outcome, t);
  } else if (name == "nack") {
    apply_nack(op.at("tag").get<std::uint64_t>());
  } else if (name == "requeue") {
    apply_requeue(t, op.at("lease_us").get<std::int64_t>());
  } else if (name == "revive") {
    apply_revive(op.at("study").get<std::string>());
  } else if (name == "purge") {
    apply_purge(optional_from<std::string>(op, "study"));
  } else {
    throw Error(ErrorCode::kStorage, fmt::format("unknown op '{}' in log", name));
  }
}

std::uint64_t Broker::log_locked(json op) {
  if (!log_) return 0;
  std::uint64_t seq = log_->append(std::move(op));
  if (++ops_since_snapshot_ >= options_.snapshot_every) snapshot_locked();
  return seq;
}

void Broker::sync(std::uint64_t seq) {
  if (log_ && seq > 0) log_->sync(seq);
}

void Broker::snapshot_locked() {
  if (!log_) return;
  log_->write_snapshot(state_to_json());
  ops_since_snapshot_ = 0;
}

void Broker::checkpoint() {
  std::lock_guard lock(mu_);
  snapshot_locked();
}

json Broker::state_to_json() const {
  json ready = json::array();
  for (const auto& [key, e] : ready_) {
    ready.push_back({key.neg_priority, key.order, envelope_to_json(e)});
  }
  json unacked = json::array();
  for (const auto& [tag, f] : unacked_) {
    unacked.push_back({tag, envelope_to_json(f.envelope), f.consumer, f.delivered_us});
  }
  json studies = json::object();
  for (const auto& [id, st] : studies_) {
    json records = json::array();
    for (const std::string& tid : st.task_ids) records.push_back(record_to_json(records_.at(tid)));
    studies[id] = {{"root", st.root}, {"counters", counters_to_json(st.counters)}, {"records", records}};
  }
  return {{"next_tag", next_tag_},
          {"next_order", next_order_},
          {"counters", counters_to_json(counters_)},
          {"ready", ready},
          {"unacked", unacked},
          {"studies", studies}};
}

void Broker::state_from_json(const json& j) {
  next_tag_ = j.at("next_tag").get<std::uint64_t>();
  next_order_ = j.at("next_order").get<std::uint64_t>();
  counters_ = counters_from_json(j.at("counters"));
  for (const auto& [id, body] : j.at("studies").items()) {
    StudyState& st = studies_[id];
    st.root = body.at("root").get<std::string>();
    st.counters = counters_from_json(body.at("counters"));
    for (const auto& rj : body.at("records")) {
      TaskRecord r = record_from_json(rj);
      NodeProgress& p = st.nodes[r.node_id];
      ++p.counts[progress_key(r.kind, r.status)];
      if (r.kind == TaskKind::kReal && r.status == TaskStatus::kSucceeded) p.samples_succeeded += r.samples;
      st.task_ids.push_back(r.task_id);
      records_.emplace(r.task_id, std::move(r));
    }
  }
  for (const auto& item : j.at("ready")) {
    TaskEnvelope e = envelope_from_json(item.at(2));
    ++study(e.study_id).ready;
    ready_.emplace(ReadyKey{item.at(0).get<std::int64_t>(), item.at(1).get<std::uint64_t>()}, std::move(e));
  }
  for (const auto& item : j.at("unacked")) {
    TaskEnvelope e = envelope_from_json(item.at(1));
    ++study(e.study_id).unacked;
    unacked_.emplace(item.at(0).get<std::uint64_t>(),
                     Inflight{std::move(e), item.at(2).get<std::string>(), item.at(3).get<std::int64_t>()});
  }
}

void Broker::recover() {
  std::lock_guard lock(mu_);
  OpLog::Loaded loaded = log_->load();
  try {
    if (loaded.state) state_from_json(*loaded.state);
    for (const json& op : loaded.ops) apply_op(op);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kStorage, fmt::format("broker recovery failed: {}", e.what()));
  }
  // Consumers from before the restart are gone; their deliveries go back
  // to the queue right away instead of waiting out the lease.
  std::size_t returned = apply_requeue(std::numeric_limits<std::int64_t>::max(), 0);
  snapshot_locked();
  spdlog::info("broker recovered {} records, {} ready, {} returned from unacked", records_.size(),
               ready_.size(), returned);
}

EnqueueResult Broker::enqueue(std::vector<TaskEnvelope> envelopes, bool force) {
  json logged = json::array();
  for (const TaskEnvelope& e : envelopes) {
    json j = envelope_to_json(e);
    std::size_t size = canonical_json(j).size();
    if (size > options_.message_limit) {
      throw Error(ErrorCode::kMessageTooLarge,
                  fmt::format("task {} is {} bytes, limit is {}", e.task_id, size, options_.message_limit));
    }
    if (log_) logged.push_back(std::move(j));
  }
  EnqueueResult result;
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    const std::int64_t now = now_micros();
    result = apply_enqueue(std::move(envelopes), force, now);
    if (log_ && result.accepted > 0) {
      seq = log_locked({{"op", "enqueue"}, {"t", now}, {"force", force}, {"envelopes", std::move(logged)}});
    }
  }
  if (result.accepted > 0) cv_.notify_all();
  sync(seq);
  return result;
}

void Broker::maybe_sweep_locked(std::int64_t now) {
  constexpr std::int64_t kSweepInterval = 250'000;
  if (unacked_.empty() || now - last_sweep_us_ < kSweepInterval) return;
  last_sweep_us_ = now;
  const std::int64_t lease_us = options_.lease.count() * 1000;
  bool expired = std::any_of(unacked_.begin(), unacked_.end(),
                             [&](const auto& kv) { return now - kv.second.delivered_us >= lease_us; });
  if (!expired) return;
  std::size_t n = apply_requeue(now, lease_us);
  log_locked({{"op", "requeue"}, {"t", now}, {"lease_us", lease_us}});
  spdlog::info("requeued {} deliveries whose lease expired", n);
}

std::optional<Delivery> Broker::consume(std::string_view consumer_id,
                                        std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const std::string consumer(consumer_id);
  std::unique_lock lock(mu_);
  while (true) {
    if (shutdown_) return std::nullopt;
    const std::int64_t now = now_micros();
    maybe_sweep_locked(now);
    if (!ready_.empty()) {
      std::optional<Delivery> d = apply_consume(consumer, now);
      std::uint64_t seq = log_locked({{"op", "consume"}, {"t", now}, {"consumer", consumer}});
      lock.unlock();
      sync(seq);
      return d;
    }
    auto steady_now = std::chrono::steady_clock::now();
    if (steady_now >= deadline) return std::nullopt;
    auto wake = std::min(deadline, steady_now + std::chrono::milliseconds(250));
    cv_.wait_until(lock, wake);
  }
}

AckResult Broker::ack(std::uint64_t tag, const AckOutcome& outcome) {
  AckResult result;
  std::uint64_t seq = 0;
  bool requeued = false;
  {
    std::lock_guard lock(mu_);
    const std::int64_t now = now_micros();
    result = apply_ack(tag, outcome, now);
    requeued = result.status == TaskStatus::kPending;
    seq = log_locked({{"op", "ack"},
                      {"t", now},
                      {"tag", tag},
                      {"success", outcome.success},
                      {"exit_code", outcome.exit_code},
                      {"detail", outcome.detail}});
  }
  if (requeued) cv_.notify_all();
  sync(seq);
  return result;
}

void Broker::nack(std::uint64_t tag) {
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    apply_nack(tag);
    seq = log_locked({{"op", "nack"}, {"t", now_micros()}, {"tag", tag}});
  }
  cv_.notify_all();
  sync(seq);
}

std::size_t Broker::requeue_expired(std::chrono::milliseconds lease) {
  std::size_t count = 0;
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    const std::int64_t now = now_micros();
    const std::int64_t lease_us = lease.count() * 1000;
    count = apply_requeue(now, lease_us);
    if (count > 0) seq = log_locked({{"op", "requeue"}, {"t", now}, {"lease_us", lease_us}});
  }
  if (count > 0) cv_.notify_all();
  sync(seq);
  return count;
}

std::size_t Broker::revive_dead(std::string_view study_id) {
  std::size_t count = 0;
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    const std::string id(study_id);
    count = apply_revive(id);
    if (count > 0) seq = log_locked({{"op", "revive"}, {"t", now_micros()}, {"study", id}});
  }
  if (count > 0) cv_.notify_all();
  sync(seq);
  return count;
}

std::size_t Broker::purge(const std::optional<std::string>& study_id) {
  std::size_t count = 0;
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    count = apply_purge(study_id);
    if (count > 0) {
      seq = log_locked({{"op", "purge"}, {"t", now_micros()},
                        {"study", study_id ? json(*study_id) : json()}});
    }
  }
  sync(seq);
  return count;
}

BrokerStats Broker::stats(const std::optional<std::string>& study_id, bool include_records) const {
  std::lock_guard lock(mu_);
  BrokerStats s;
  auto add_status_counts = [&](const StudyState& st) {
    for (const auto& [node, p] : st.nodes) {
      for (const auto& [key, n] : p.counts) {
        std::string status = key.substr(key.find('.') + 1);
        s.status_counts[status] += n;
      }
    }
  };
  if (!study_id) {
    s.counters = counters_;
    s.ready = ready_.size();
    s.unacked = unacked_.size();
    for (const auto& [id, st] : studies_) {
      s.studies.push_back(id);
      add_status_counts(st);
      if (include_records) {
        for (const std::string& tid : st.task_ids) s.records.push_back(records_.at(tid));
      }
    }
    return s;
  }
  auto it = studies_.find(*study_id);
  if (it == studies_.end()) return s;
  const StudyState& st = it->second;
  s.known_study = true;
  s.counters = st.counters;
  s.ready = st.ready;
  s.unacked = st.unacked;
  s.study_root = st.root;
  s.nodes = st.nodes;
  s.studies.push_back(*study_id);
  add_status_counts(st);
  if (include_records) {
    for (const std::string& tid : st.task_ids) s.records.push_back(records_.at(tid));
  }
  return s;
}

void Broker::shutdown() {
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
  }
  cv_.notify_all();
}

}  // namespace ensemble
