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

#include "bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <mutex>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ensemble/broker.hpp"
#include "ensemble/client.hpp"
#include "ensemble/error.hpp"
#include "ensemble/ids.hpp"
#include "ensemble/server.hpp"
#include "ensemble/spec.hpp"
#include "ensemble/study.hpp"
#include "ensemble/worker.hpp"

namespace ensemble::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_between(SteadyTime a, SteadyTime b) { return std::chrono::duration<double>(b - a).count(); }

/// A TCP broker on an ephemeral localhost port plus a scratch directory.
class Harness {
 public:
  Harness() : dir_(fs::temp_directory_path() / fmt::format("ensemble-bench-{}", random_id().substr(0, 12))) {
    fs::create_directories(dir_);
    BrokerOptions options;
    options.fsync = false;
    broker_ = std::make_unique<Broker>(options);
    server_ = std::make_unique<BrokerServer>(*broker_, "127.0.0.1", 0);
    server_->start();
  }

  ~Harness() {
    server_->stop();
    broker_->shutdown();
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  std::string endpoint() const { return server_->endpoint(); }
  const fs::path& dir() const { return dir_; }
  fs::path workspace() const { return dir_ / "ws"; }

  fs::path write_spec(std::uint64_t n, std::uint32_t b, double sleep) const {
    const fs::path path = dir_ / "null.yaml";
    std::ofstream out(path, std::ios::trunc);
    out << "description: null workflow\n"
        << "env:\n"
        << "  SLEEP: \"" << fmt::format("{}", sleep) << "\"\n"
        << "study:\n"
        << "  - name: null\n"
        << "    run: sleep $(SLEEP)\n"
        << "    mode: per_sample\n"
        << "samples:\n"
        << "  count: " << n << "\n"
        << "  columns: [x]\n"
        << "  source:\n"
        << "    generator:\n"
        << "      kind: uniform\n"
        << "      seed: 1\n"
        << "  branching: " << b << "\n"
        << "run:\n"
        << "  broker: \"" << endpoint() << "\"\n"
        << "  workspace: \"" << workspace().string() << "\"\n";
    return path;
  }

  StudyPlan enqueue(std::uint64_t n, std::uint32_t b, double sleep) {
    LoadedSpec loaded = load_spec_file(write_spec(n, b, sleep));
    auto client = connect_broker(endpoint());
    EnqueueOptions options;
    options.workspace_root = workspace();
    return enqueue_study(loaded, client.get(), options);
  }

  BrokerStats stats(const std::string& study) const { return broker_->stats(study); }

 private:
  fs::path dir_;
  std::unique_ptr<Broker> broker_;
  std::unique_ptr<BrokerServer> server_;
};

/// Records when real tasks begin and end.
class Recorder : public WorkerObserver {
 public:
  std::function<void()> on_first_begin;

  void on_execute_begin(const TaskEnvelope& envelope, SteadyTime at) override {
    if (envelope.kind == TaskKind::kGeneration) return;
    bool first = false;
    {
      std::lock_guard lock(mu_);
      if (!first_begin_) {
        first_begin_ = at;
        first = true;
      }
    }
    if (first && on_first_begin) on_first_begin();
  }

  void on_task_done(const TaskEnvelope& envelope, const std::vector<ExecutionResult>&, double overhead) override {
    if (envelope.kind == TaskKind::kGeneration) return;
    std::lock_guard lock(mu_);
    overheads_ms_.push_back(overhead * 1000.0);
    last_done_ = Clock::now();
  }

  std::optional<SteadyTime> first_begin() const {
    std::lock_guard lock(mu_);
    return first_begin_;
  }
  std::optional<SteadyTime> last_done() const {
    std::lock_guard lock(mu_);
    return last_done_;
  }
  std::vector<double> overheads_ms() const {
    std::lock_guard lock(mu_);
    return overheads_ms_;
  }

 private:
  mutable std::mutex mu_;
  std::optional<SteadyTime> first_begin_;
  std::optional<SteadyTime> last_done_;
  std::vector<double> overheads_ms_;
};

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::string scenario) : out_(out), scenario_(std::move(scenario)) {
    out_ << kCsvHeader << "\n";
  }

  void row(std::uint64_t n, std::uint32_t b, int workers, int trial, std::string_view metric, double value) {
    fmt::print(out_, "{},{},{},{},{},{},{}\n", scenario_, n, b, workers, trial, metric, value);
    out_.flush();
  }

 private:
  std::ostream& out_;
  std::string scenario_;
};

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

WorkerConfig pool_config(const Harness& h, int workers, const BenchOptions& o) {
  WorkerConfig config;
  config.broker_endpoint = h.endpoint();
  config.concurrency = workers;
  config.workspace_root = h.workspace();
  config.exe_path = o.exe_path;
  config.poll_timeout = std::chrono::milliseconds(100);
  config.heartbeat_interval = std::chrono::seconds(5);
  return config;
}

void bench_enqueue(const BenchOptions& o, CsvWriter& csv) {
  const std::uint32_t b = o.b ? o.b : 25;
  for (std::uint64_t n : o.n.empty() ? std::vector<std::uint64_t>{100, 1000, 10000, 100000} : o.n) {
    for (int trial = 0; trial < o.trials; ++trial) {
      Harness h;
      const auto t0 = Clock::now();
      StudyPlan plan = h.enqueue(n, b, o.sleep);
      const double elapsed = seconds_between(t0, Clock::now());
      const BrokerStats stats = h.stats(plan.study_id);
      csv.row(n, b, 0, trial, "enqueue_seconds", elapsed);
      csv.row(n, b, 0, trial, "enqueue_rate", elapsed > 0 ? static_cast<double>(n) / elapsed : 0.0);
      csv.row(n, b, 0, trial, "messages", static_cast<double>(stats.counters.enqueued));
    }
  }
}

void bench_startup(const BenchOptions& o, CsvWriter& csv) {
  const std::uint32_t b = o.b ? o.b : 10;
  const std::uint64_t n = o.n.empty() ? 1000 : o.n.front();
  for (int workers : o.workers.empty() ? std::vector<int>{1, 2, 4} : o.workers) {
    for (int trial = 0; trial < o.trials; ++trial) {
      Harness h;
      h.enqueue(n, b, o.sleep);
      Recorder recorder;
      WorkerPool pool(pool_config(h, workers, o), &recorder);
      recorder.on_first_begin = [&pool] { pool.request_stop(); };
      const auto t0 = Clock::now();
      pool.run();
      auto first = recorder.first_begin();
      if (!first) throw Error(ErrorCode::kConfig, "startup run ended before any real task began");
      csv.row(n, b, workers, trial, "startup_seconds", seconds_between(t0, *first));
    }
  }
}

struct DrainResult {
  double makespan = 0.0;
  std::vector<double> overheads_ms;
};

DrainResult run_to_completion(const BenchOptions& o, std::uint64_t n, std::uint32_t b, int workers) {
  Harness h;
  StudyPlan plan = h.enqueue(n, b, o.sleep);
  Recorder recorder;
  WorkerConfig config = pool_config(h, workers, o);
  config.exit_when_drained = true;
  WorkerPool pool(config, &recorder);
  pool.run();
  const BrokerStats stats = h.stats(plan.study_id);
  auto it = stats.nodes.begin();
  if (it == stats.nodes.end() || it->second.samples_succeeded < n) {
    throw Error(ErrorCode::kConfig, fmt::format("null study finished with {} of {} samples",
                                                it == stats.nodes.end() ? 0 : it->second.samples_succeeded, n));
  }
  DrainResult r;
  if (auto first = recorder.first_begin(); first && recorder.last_done()) {
    r.makespan = seconds_between(*first, *recorder.last_done());
  }
  r.overheads_ms = recorder.overheads_ms();
  return r;
}

void bench_overhead(const BenchOptions& o, CsvWriter& csv) {
  const std::uint32_t b = o.b ? o.b : 25;
  const std::uint64_t n = o.n.empty() ? 1000 : o.n.front();
  const int workers = o.workers.empty() ? 4 : o.workers.front();
  for (int trial = 0; trial < o.trials; ++trial) {
    DrainResult r = run_to_completion(o, n, b, workers);
    for (double v : r.overheads_ms) csv.row(n, b, workers, trial, "overhead_ms", v);
    csv.row(n, b, workers, trial, "overhead_median_ms", percentile(r.overheads_ms, 0.5));
    csv.row(n, b, workers, trial, "overhead_p90_ms", percentile(r.overheads_ms, 0.9));
    csv.row(n, b, workers, trial, "overhead_p99_ms", percentile(r.overheads_ms, 0.99));
    csv.row(n, b, workers, trial, "makespan_seconds", r.makespan);
  }
}

void bench_scaling(const BenchOptions& o, CsvWriter& csv) {
  const std::uint32_t b = o.b ? o.b : 25;
  const std::uint64_t n = o.n.empty() ? 100 : o.n.front();
  for (int workers : o.workers.empty() ? std::vector<int>{1, 2, 4} : o.workers) {
    for (int trial = 0; trial < o.trials; ++trial) {
      DrainResult r = run_to_completion(o, n, b, workers);
      csv.row(n, b, workers, trial, "makespan_seconds", r.makespan);
    }
  }
}

}  // namespace

void run_bench(BenchOptions options, std::ostream& out) {
  if (options.sleep < 0) throw Error(ErrorCode::kConfig, "--sleep must be non-negative");
  if (options.trials < 1) throw Error(ErrorCode::kConfig, "--trials must be at least 1");
  for (int w : options.workers) {
    if (w < 1) throw Error(ErrorCode::kConfig, "--workers entries must be at least 1");
  }
  void (*scenario)(const BenchOptions&, CsvWriter&) = nullptr;
  if (options.scenario == "enqueue") scenario = bench_enqueue;
  if (options.scenario == "startup") scenario = bench_startup;
  if (options.scenario == "overhead") scenario = bench_overhead;
  if (options.scenario == "scaling") scenario = bench_scaling;
  if (!scenario) {
    throw Error(ErrorCode::kConfig,
                fmt::format("unknown scenario '{}' (enqueue, startup, overhead, scaling)", options.scenario));
  }
  CsvWriter csv(out, options.scenario);
  scenario(options, csv);
}

}  // namespace ensemble::bench
