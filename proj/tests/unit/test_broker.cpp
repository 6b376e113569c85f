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

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "ensemble/broker.hpp"
#include "ensemble/error.hpp"
#include "test_util.hpp"

namespace ensemble {
namespace {

using namespace std::chrono_literals;

TaskEnvelope env(const std::string& id, int priority, int retries = 0,
                 TaskKind kind = TaskKind::kReal, const std::string& study = "s") {
  TaskEnvelope e;
  e.task_id = id;
  e.kind = kind;
  e.study_id = study;
  e.priority = priority;
  e.node_id = "node";
  if (kind == TaskKind::kReal) e.sample = 0;
  if (kind == TaskKind::kGeneration) e.range = SampleRange{0, 1};
  e.retries = retries;
  return e;
}

std::string consume_id(Broker& b) {
  auto d = b.consume("c", 0ms);
  return d ? d->envelope.task_id : "";
}

TEST(Broker, PriorityThenFifo) {
  Broker b;
  b.enqueue({env("a", 10), env("g", 1), env("c", 10)});
  EXPECT_EQ(consume_id(b), "a");
  EXPECT_EQ(consume_id(b), "c");
  EXPECT_EQ(consume_id(b), "g");
  EXPECT_EQ(consume_id(b), "");
}

TEST(Broker, MessageTooLargeRejectsWholeBatch) {
  BrokerOptions opts;
  opts.message_limit = 256;
  Broker b(opts);
  TaskEnvelope big = env("big", 1);
  big.payload = {{"blob", std::string(1000, 'x')}};
  try {
    b.enqueue({env("small", 1), big});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMessageTooLarge);
  }
  EXPECT_EQ(b.stats(std::nullopt).counters.enqueued, 0u);
}

TEST(Broker, EmptyConsumeTimesOut) {
  Broker b;
  const auto start = std::chrono::steady_clock::now();
  EXPECT_FALSE(b.consume("c", 10ms).has_value());
  EXPECT_GE(std::chrono::steady_clock::now() - start, 9ms);
}

TEST(Broker, ConsumeWakesOnEnqueue) {
  Broker b;
  std::thread producer([&] {
    std::this_thread::sleep_for(50ms);
    b.enqueue({env("late", 1)});
  });
  auto d = b.consume("c", 5000ms);
  producer.join();
  ASSERT_TRUE(d.has_value());
  EXPECT_EQ(d->envelope.task_id, "late");
}

TEST(Broker, FreshTagsAndRunningRecord) {
  Broker b;
  b.enqueue({env("x", 1), env("y", 1)});
  auto d1 = b.consume("w1", 0ms);
  auto d2 = b.consume("w2", 0ms);
  ASSERT_TRUE(d1 && d2);
  EXPECT_NE(d1->tag, d2->tag);
  auto s = b.stats("s", true);
  for (const TaskRecord& r : s.records) {
    EXPECT_EQ(r.status, TaskStatus::kRunning);
    EXPECT_EQ(r.attempt, 1);
    EXPECT_TRUE(r.started_us.has_value());
  }
}

TEST(Broker, RacingConsumersReceiveEachEnvelopeOnce) {
  Broker b;
  constexpr int kTasks = 2000;
  std::vector<TaskEnvelope> batch;
  for (int i = 0; i < kTasks; ++i) batch.push_back(env("t" + std::to_string(i), i % 3));
  b.enqueue(batch);
  std::mutex mu;
  std::multiset<std::string> seen;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      while (auto d = b.consume("c" + std::to_string(t), 0ms)) {
        b.ack(d->tag, {});
        std::lock_guard lock(mu);
        seen.insert(d->envelope.task_id);
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(kTasks));
  EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), static_cast<std::size_t>(kTasks));
  auto s = b.stats(std::nullopt);
  EXPECT_EQ(s.counters.delivered, static_cast<std::uint64_t>(kTasks));
  EXPECT_EQ(s.counters.succeeded, static_cast<std::uint64_t>(kTasks));
}

TEST(Broker, FailureRetriesThenDies) {
  Broker b;
  b.enqueue({env("r", 5, 1)});
  auto d = b.consume("c", 0ms);
  AckResult first = b.ack(d->tag, {false, 3, nullptr});
  EXPECT_EQ(first.status, TaskStatus::kPending);
  d = b.consume("c", 0ms);
  ASSERT_TRUE(d.has_value());
  EXPECT_EQ(d->envelope.retries, 0);
  AckResult second = b.ack(d->tag, {false, 3, nullptr});
  EXPECT_EQ(second.status, TaskStatus::kDead);
  EXPECT_FALSE(b.consume("c", 0ms).has_value());
  auto s = b.stats("s", true);
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_EQ(s.records[0].attempt, 2);
  EXPECT_EQ(s.records[0].exit_code, 3);
  EXPECT_EQ(s.counters.failed, 2u);
  EXPECT_EQ(s.counters.dead, 1u);

  EXPECT_EQ(b.revive_dead("s"), 1u);
  d = b.consume("c", 0ms);
  ASSERT_TRUE(d.has_value());
  EXPECT_EQ(d->envelope.retries, 1);
  EXPECT_EQ(b.ack(d->tag, {}).status, TaskStatus::kSucceeded);
  EXPECT_THROW(b.revive_dead("unknown"), Error);
}

TEST(Broker, UnknownTag) {
  Broker b;
  try {
    b.ack(99, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownTag);
  }
}

TEST(Broker, NackKeepsRetries) {
  Broker b;
  b.enqueue({env("n", 1, 2)});
  auto d = b.consume("c", 0ms);
  b.nack(d->tag);
  d = b.consume("c", 0ms);
  ASSERT_TRUE(d.has_value());
  EXPECT_EQ(d->envelope.retries, 2);
}

TEST(Broker, RequeueExpiredCountsOutstanding) {
  Broker b;
  EXPECT_EQ(b.requeue_expired(0ms), 0u);
  for (int i = 0; i < 5; ++i) b.enqueue({env("q" + std::to_string(i), 1)});
  std::vector<Delivery> got;
  for (int i = 0; i < 5; ++i) got.push_back(*b.consume("c", 0ms));
  b.ack(got[0].tag, {});
  b.ack(got[1].tag, {});
  EXPECT_EQ(b.requeue_expired(10min), 0u);
  std::this_thread::sleep_for(5ms);
  EXPECT_EQ(b.requeue_expired(1ms), 3u);
  std::set<std::string> again;
  while (auto d = b.consume("c", 0ms)) again.insert(d->envelope.task_id);
  EXPECT_EQ(again, (std::set<std::string>{"q2", "q3", "q4"}));
  for (const TaskRecord& r : b.stats("s", true).records) {
    if (r.task_id >= "q2") EXPECT_EQ(r.attempt, 2);
  }
}

TEST(Broker, DuplicatesAndForce) {
  Broker b;
  EXPECT_EQ(b.enqueue({env("d", 1)}).accepted, 1u);
  EXPECT_EQ(b.enqueue({env("d", 1)}).duplicates, 1u);
  EXPECT_EQ(b.enqueue({env("d", 1)}, true).duplicates, 1u);  // still pending
  auto d = b.consume("c", 0ms);
  b.ack(d->tag, {});
  EXPECT_EQ(b.enqueue({env("d", 1)}, true).accepted, 1u);
  EXPECT_TRUE(b.consume("c", 0ms).has_value());
}

TEST(Broker, PurgeScopesToStudy) {
  Broker b;
  b.enqueue({env("a1", 1, 0, TaskKind::kReal, "a"), env("a2", 1, 0, TaskKind::kReal, "a"),
             env("b1", 1, 0, TaskKind::kReal, "b")});
  auto d = b.consume("c", 0ms);  // a1 in flight
  EXPECT_EQ(b.purge(std::string("a")), 1u);
  EXPECT_EQ(consume_id(b), "b1");
  b.ack(d->tag, {});
  auto s = b.stats(std::string("a"));
  EXPECT_EQ(s.counters.succeeded, 1u);
  EXPECT_EQ(s.ready, 0u);
  EXPECT_EQ(b.purge(std::nullopt), 0u);
}

TEST(Broker, EmptyStatsAreZero) {
  Broker b;
  auto s = b.stats(std::nullopt);
  EXPECT_EQ(s.counters, BrokerCounters{});
  EXPECT_EQ(s.ready, 0u);
  EXPECT_EQ(s.unacked, 0u);
  EXPECT_FALSE(b.stats(std::string("nope")).known_study);
}

TEST(Broker, StatsJsonRoundTrip) {
  Broker b;
  b.enqueue({env("a", 1), env("g", 1, 0, TaskKind::kGeneration)});
  b.ack(b.consume("c", 0ms)->tag, {true, 0, {{"k", 1}}});
  auto s = b.stats("s", true);
  auto back = stats_from_json(stats_to_json(s));
  EXPECT_EQ(back.counters, s.counters);
  EXPECT_EQ(back.records, s.records);
  EXPECT_EQ(back.nodes, s.nodes);
}

// A copy of a live broker's data directory stands in for a crash.
TEST(Broker, SurvivesCrashWithPersistence) {
  testing::TempDir dir;
  BrokerOptions opts;
  opts.data_dir = dir / "live";
  opts.snapshot_every = 7;
  Broker live(opts);
  for (int i = 0; i < 20; ++i) live.enqueue({env("p" + std::to_string(i), i % 2 ? 10 : 1)});
  auto inflight = live.consume("c", 0ms);
  live.ack(live.consume("c", 0ms)->tag, {});
  std::filesystem::copy(opts.data_dir, dir / "crashed", std::filesystem::copy_options::recursive);

  BrokerOptions reopened = opts;
  reopened.data_dir = dir / "crashed";
  Broker recovered(reopened);
  auto s = recovered.stats(std::nullopt);
  EXPECT_EQ(s.counters.enqueued, 20u);
  EXPECT_EQ(s.counters.succeeded, 1u);
  EXPECT_EQ(s.unacked, 0u);
  EXPECT_EQ(s.ready, 19u);
  std::set<std::string> drained;
  while (auto d = recovered.consume("c", 0ms)) {
    drained.insert(d->envelope.task_id);
    recovered.ack(d->tag, {});
  }
  EXPECT_EQ(drained.size(), 19u);
  EXPECT_TRUE(drained.count(inflight->envelope.task_id));
  EXPECT_EQ(recovered.stats(std::nullopt).counters.succeeded, 20u);
}

TEST(Broker, CorruptLogTailIsIgnored) {
  testing::TempDir dir;
  BrokerOptions opts;
  opts.data_dir = dir / "data";
  {
    Broker b(opts);
    b.enqueue({env("one", 1)});
    b.enqueue({env("two", 1)});
  }
  for (const auto& entry : std::filesystem::directory_iterator(opts.data_dir)) {
    if (entry.path().extension() == ".log") {
      std::ofstream out(entry.path(), std::ios::app);
      out << "deadbeef {\"partial\":";
    }
  }
  Broker b(opts);
  EXPECT_EQ(b.stats(std::nullopt).ready, 2u);
}

// Random operation sequences against a reference model of the ready queue.
TEST(BrokerProperty, ConservationAndPriority) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    Broker b;
    std::map<std::string, int> ready_priority;  // model: id -> priority
    std::map<std::uint64_t, TaskEnvelope> held;
    int next_id = 0;
    for (int step = 0; step < 300; ++step) {
      switch (rng() % 6) {
        case 0:
        case 1: {
          std::vector<TaskEnvelope> batch;
          for (int k = 0; k < 1 + static_cast<int>(rng() % 3); ++k) {
            TaskEnvelope e = env("e" + std::to_string(next_id++), static_cast<int>(rng() % 4),
                                 static_cast<int>(rng() % 2));
            ready_priority[e.task_id] = e.priority;
            batch.push_back(e);
          }
          b.enqueue(batch);
          break;
        }
        case 2: {
          auto d = b.consume("c", 0ms);
          if (!d) {
            ASSERT_TRUE(ready_priority.empty());
            break;
          }
          int best = -1;
          for (const auto& [id, p] : ready_priority) best = std::max(best, p);
          ASSERT_EQ(d->envelope.priority, best);
          ready_priority.erase(d->envelope.task_id);
          held[d->tag] = d->envelope;
          break;
        }
        case 3:
          if (!held.empty()) {
            auto it = std::next(held.begin(), static_cast<long>(rng() % held.size()));
            const bool ok = rng() % 2;
            b.ack(it->first, {ok, ok ? 0 : 1, nullptr});
            if (!ok && it->second.retries > 0) ready_priority[it->second.task_id] = it->second.priority;
            held.erase(it);
          }
          break;
        case 4:
          if (!held.empty()) {
            auto it = held.begin();
            b.nack(it->first);
            ready_priority[it->second.task_id] = it->second.priority;
            held.erase(it);
          }
          break;
        default:
          if (rng() % 10 == 0) {
            b.purge(std::nullopt);
            ready_priority.clear();
          }
      }
      const auto s = b.stats(std::nullopt);
      ASSERT_EQ(s.ready, ready_priority.size());
      ASSERT_EQ(s.unacked, held.size());
      ASSERT_EQ(s.counters.enqueued, s.counters.succeeded + s.counters.dead + s.ready + s.unacked);
    }
  }
}

}  // namespace
}  // namespace ensemble
