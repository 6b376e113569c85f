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

#include <cmath>
#include <filesystem>
#include <set>

#include "ensemble/broker.hpp"
#include "ensemble/client.hpp"
#include "ensemble/error.hpp"
#include "ensemble/executor.hpp"
#include "ensemble/study.hpp"
#include "ensemble/worker.hpp"
#include "test_util.hpp"

namespace ensemble {
namespace {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

class Harness {
 public:
  StudyPlan submit(const std::string& yaml) {
    testing::write_text(dir_ / "spec.yaml", yaml);
    EnqueueOptions options;
    options.workspace_root = dir_ / "ws";
    plan_ = enqueue_study(load_spec_file(dir_ / "spec.yaml"), client_.get(), options);
    return plan_;
  }

  WorkerSummary work(int concurrency, int bundle = 1) {
    WorkerConfig c;
    c.broker = broker_;
    c.concurrency = concurrency;
    c.bundle_size = bundle;
    c.poll_timeout = 20ms;
    c.exit_when_drained = true;
    c.idle_exit = 60s;
    c.workspace_root = dir_ / "ws";
    return WorkerPool(c).run();
  }

  BrokerStats stats(bool records = true) { return client_->stats(plan_.study_id, records); }
  BrokerClient& client() { return *client_; }
  const fs::path& root() const { return plan_.study_root; }

  std::vector<TaskRecord> records_of(const std::string& node) {
    std::vector<TaskRecord> out;
    for (const TaskRecord& r : stats().records) {
      if (r.node_id == node) out.push_back(r);
    }
    return out;
  }

 private:
  testing::TempDir dir_;
  std::shared_ptr<Broker> broker_ = std::make_shared<Broker>();
  std::unique_ptr<BrokerClient> client_ = make_local_client(broker_);
  StudyPlan plan_;
};

std::string per_sample_spec(const std::string& command, int count, int branching,
                            int retries = 3, const std::string& kind = "grid") {
  return "study:\n"
         "  - name: step\n"
         "    run: " + command + "\n"
         "    mode: per_sample\n"
         "    retries: " + std::to_string(retries) + "\n"
         "samples:\n"
         "  count: " + std::to_string(count) + "\n"
         "  columns: [x]\n"
         "  source:\n"
         "    generator:\n"
         "      kind: " + kind + "\n"
         "  branching: " + std::to_string(branching) + "\n";
}

std::uint64_t count_status(const BrokerStats& s, TaskStatus status) {
  std::uint64_t n = 0;
  for (const TaskRecord& r : s.records) n += r.status == status;
  return n;
}

TEST(Worker, NineSamplesFourWorkers) {
  Harness h;
  StudyPlan plan = h.submit(per_sample_spec("true", 9, 3));
  EXPECT_EQ(plan.messages, 1u);
  EXPECT_EQ(plan.total_tasks(), 13u);
  WorkerSummary summary = h.work(4);
  EXPECT_EQ(summary.generation, 4u);
  EXPECT_EQ(summary.executed, 9u);
  BrokerStats s = h.stats();
  EXPECT_EQ(s.counters.succeeded, 13u);
  EXPECT_EQ(count_status(s, TaskStatus::kSucceeded), 13u);
  for (int i = 0; i < 9; ++i) {
    const fs::path ws = h.root() / "step" / std::to_string(i);
    EXPECT_TRUE(fs::exists(ws / "exec.sh")) << ws;
    EXPECT_EQ(read_done_marker(ws), 0) << ws;
  }
}

TEST(Worker, SampleValueReachesFilesystem) {
  Harness h;
  h.submit(per_sample_spec("echo $(SAMPLE.x) > out.txt", 3, 3));
  h.work(1);
  EXPECT_EQ(testing::read_text(h.root() / "step" / "1" / "out.txt"), "0.5\n");
  EXPECT_EQ(testing::read_text(h.root() / "step" / "2" / "out.txt"), "1\n");
}

TEST(Worker, StepRunsUnderInterpreterShell) {
  if (!fs::exists("/usr/bin/python3")) GTEST_SKIP() << "python3 not installed";
  Harness h;
  h.submit(
      "study:\n"
      "  - name: py\n"
      "    shell: /usr/bin/python3\n"
      "    run: |\n"
      "      import sys\n"
      "      open('out.txt', 'w').write(str(6 * 7) + sys.version[:1])\n");
  h.work(1);
  EXPECT_EQ(testing::read_text(h.root() / "py" / "out.txt"), "423");
}

TEST(Worker, FailingStepIsAttemptedTwiceThenDead) {
  Harness h;
  h.submit(per_sample_spec("exit 1", 3, 3, 1));
  h.work(1);
  const auto reals = h.records_of("step");
  std::size_t real_count = 0;
  for (const TaskRecord& r : reals) {
    if (r.kind != TaskKind::kReal) continue;
    ++real_count;
    EXPECT_EQ(r.status, TaskStatus::kDead);
    EXPECT_EQ(r.attempt, 2);
    EXPECT_EQ(r.exit_code, 1);
  }
  EXPECT_EQ(real_count, 3u);
  EXPECT_FALSE(fs::exists(h.root() / "step" / "0" / ".done"));
}

TEST(Worker, BundlesShareOneAck) {
  Harness h;
  h.submit(per_sample_spec("sleep 0.01", 10, 10));
  WorkerSummary summary = h.work(1, 10);
  EXPECT_EQ(summary.executed, 1u);
  BrokerStats s = h.stats();
  EXPECT_EQ(s.nodes.at("step").samples_succeeded, 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(read_done_marker(h.root() / "step" / std::to_string(i)), 0);
}

TEST(Worker, BundleRecordsPerSampleStatuses) {
  Harness h;
  h.submit(per_sample_spec("test $(SAMPLE_ID) -ne 3", 10, 10, 0));
  h.work(1, 10);
  BrokerStats s = h.stats();
  std::vector<int> codes;
  for (const TaskRecord& r : s.records) {
    if (r.kind != TaskKind::kReal) continue;
    EXPECT_EQ(r.status, TaskStatus::kDead);
    for (const auto& entry : r.detail.at("samples")) codes.push_back(entry.at("exit_code").get<int>());
  }
  EXPECT_EQ(codes, (std::vector<int>{0, 0, 0, 1, 0, 0, 0, 0, 0, 0}));
}

TEST(Worker, BundleSizeOneMatchesPlainExecution) {
  std::vector<TaskEnvelope> reals;
  for (std::uint64_t s = 0; s < 5; ++s) {
    TaskEnvelope e;
    e.task_id = "t" + std::to_string(s);
    e.study_id = "s";
    e.node_id = "n";
    e.sample = s;
    reals.push_back(e);
  }
  EXPECT_EQ(bundle_real_tasks(reals, 1), reals);
  auto bundles = bundle_real_tasks(reals, 2);
  ASSERT_EQ(bundles.size(), 3u);
  EXPECT_EQ(bundles[0].range, (SampleRange{0, 2}));
  EXPECT_FALSE(bundles[2].range.has_value());
  EXPECT_EQ(bundles[2].sample, 4u);
}

const char* kFanIn =
    "study:\n"
    "  - name: sim\n"
    "    run: sleep 0.05; echo $(SAMPLE.x) > value.txt\n"
    "  - name: collect\n"
    "    run: cat $(sim.workspace)/*/value.txt | wc -l > count.txt\n"
    "    depends: [sim_*]\n"
    "samples:\n"
    "  count: 3\n"
    "  columns: [x]\n"
    "  source:\n"
    "    generator:\n"
    "      kind: grid\n"
    "  branching: 3\n";

TEST(Worker, FanInWaitsForEverySample) {
  for (int trial = 0; trial < 3; ++trial) {
    Harness h;
    h.submit(kFanIn);
    h.work(4);
    const auto sims = h.records_of("sim");
    const auto collect = h.records_of("collect");
    ASSERT_EQ(collect.size(), 1u);
    EXPECT_EQ(collect[0].attempt, 1);
    EXPECT_EQ(collect[0].status, TaskStatus::kSucceeded);
    for (const TaskRecord& r : sims) {
      if (r.kind == TaskKind::kReal) EXPECT_LE(*r.finished_us, *collect[0].started_us);
    }
    EXPECT_EQ(testing::read_text(h.root() / "collect" / "count.txt"), "3\n");
  }
}

TEST(Worker, DiamondJoinRunsOnce) {
  for (int trial = 0; trial < 5; ++trial) {
    Harness h;
    h.submit(
        "study:\n"
        "  - name: a\n    run: sleep 0.01\n"
        "  - name: b\n    run: sleep 0.02\n    depends: [a]\n"
        "  - name: c\n    run: sleep 0.02\n    depends: [a]\n"
        "  - name: d\n    run: echo run >> ../d_runs.txt\n    depends: [b, c]\n");
    h.work(4);
    EXPECT_EQ(h.records_of("d").size(), 1u);
    EXPECT_EQ(testing::read_text(h.root() / "d_runs.txt"), "run\n");
    EXPECT_EQ(h.stats().counters.succeeded, 4u);
  }
}

TEST(Worker, DeadPredecessorStallsChain) {
  Harness h;
  h.submit(
      "study:\n"
      "  - name: a\n    run: exit 3\n    retries: 0\n"
      "  - name: b\n    run: true\n    depends: [a]\n");
  h.work(2);
  BrokerStats s = h.stats();
  EXPECT_EQ(s.nodes.count("b"), 0u);
  EXPECT_EQ(s.counters.dead, 1u);
  EXPECT_EQ(s.ready + s.unacked, 0u);
}

TEST(Worker, ResubmitFailed) {
  Harness h;
  h.submit(per_sample_spec("test $(SAMPLE_ID) -ne 2 -a $(SAMPLE_ID) -ne 5", 9, 3, 0));
  h.work(2);
  EXPECT_EQ(h.stats().counters.dead, 2u);
  EXPECT_EQ(resubmit(h.client(), h.stats().records.front().study_id, ResubmitScope::kFailed), 2u);
}

TEST(Worker, ResubmitMissingRerunsDeletedMarkers) {
  Harness h;
  StudyPlan plan = h.submit(per_sample_spec("echo x >> runs.txt", 9, 3));
  h.work(2);
  EXPECT_EQ(resubmit(h.client(), plan.study_id, ResubmitScope::kFailed), 0u);
  EXPECT_EQ(resubmit(h.client(), plan.study_id, ResubmitScope::kMissing), 0u);
  for (int i : {1, 4, 7}) fs::remove(h.root() / "step" / std::to_string(i) / ".done");
  EXPECT_EQ(resubmit(h.client(), plan.study_id, ResubmitScope::kMissing), 3u);
  WorkerSummary summary = h.work(2);
  EXPECT_EQ(summary.executed, 3u);
  for (int i = 0; i < 9; ++i) {
    const fs::path ws = h.root() / "step" / std::to_string(i);
    EXPECT_EQ(read_done_marker(ws), 0);
    const bool rerun = i == 1 || i == 4 || i == 7;
    EXPECT_EQ(testing::read_text(ws / "runs.txt"), rerun ? "x\nx\n" : "x\n") << i;
  }
  try {
    resubmit(h.client(), "no-such-study", ResubmitScope::kMissing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownStudy);
  }
}

TEST(Worker, ExistingMarkerSkipsExecution) {
  Harness h;
  h.submit(per_sample_spec("echo x >> runs.txt", 2, 2));
  const fs::path ws = h.root() / "step" / "0";
  fs::create_directories(ws);
  testing::write_text(ws / ".done", "0\n{}\n");
  h.work(1);
  EXPECT_FALSE(fs::exists(ws / "runs.txt"));
  EXPECT_TRUE(fs::exists(h.root() / "step" / "1" / "runs.txt"));
}

TEST(Worker, ZeroPaddedWorkspaces) {
  EXPECT_EQ(sample_index_width(0), 1);
  EXPECT_EQ(sample_index_width(1), 1);
  EXPECT_EQ(sample_index_width(10), 1);
  EXPECT_EQ(sample_index_width(11), 2);
  EXPECT_EQ(sample_index_width(1000), 3);
  EXPECT_EQ(sample_index_width(1001), 4);
  Harness h;
  h.submit(per_sample_spec("true", 12, 4));
  h.work(2);
  EXPECT_TRUE(fs::exists(h.root() / "step" / "00" / ".done"));
  EXPECT_TRUE(fs::exists(h.root() / "step" / "11" / ".done"));
}

TEST(Worker, OverheadIsNonNegative) {
  struct Recorder : WorkerObserver {
    std::mutex mu;
    std::vector<double> overheads;
    void on_task_done(const TaskEnvelope&, const std::vector<ExecutionResult>& results,
                      double overhead) override {
      std::lock_guard lock(mu);
      overheads.push_back(overhead);
      for (const ExecutionResult& r : results) {
        EXPECT_GE(r.wall_time, 0.0);
        EXPECT_GE(r.overhead_time, 0.0);
      }
    }
  } recorder;
  testing::TempDir dir;
  auto broker = std::make_shared<Broker>();
  auto client = make_local_client(broker);
  testing::write_text(dir / "spec.yaml", per_sample_spec("sleep 0.01", 20, 5));
  EnqueueOptions options;
  options.workspace_root = dir / "ws";
  enqueue_study(load_spec_file(dir / "spec.yaml"), client.get(), options);
  WorkerConfig c;
  c.broker = broker;
  c.concurrency = 2;
  c.poll_timeout = 20ms;
  c.exit_when_drained = true;
  c.workspace_root = dir / "ws";
  WorkerPool(c, &recorder).run();
  ASSERT_EQ(recorder.overheads.size(), 20u);
  for (double o : recorder.overheads) {
    EXPECT_TRUE(std::isfinite(o));
    EXPECT_GE(o, 0.0);
  }
}

TEST(Worker, UnreachableBrokerGivesUp) {
  WorkerConfig c;
  c.broker_endpoint = "127.0.0.1:1";
  c.max_unreachable = 2;
  c.poll_timeout = 10ms;
  c.idle_exit = 30s;
  WorkerSummary s = WorkerPool(c).run();
  EXPECT_TRUE(s.unreachable);
}

}  // namespace
}  // namespace ensemble
