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

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "ensemble/broker.hpp"
#include "ensemble/envelope.hpp"
#include "ensemble/hierarchy.hpp"
#include "ensemble/spec.hpp"

namespace {

using ensemble::TaskEnvelope;

TaskEnvelope sample_envelope(std::uint64_t i) {
  TaskEnvelope e;
  e.task_id = ensemble::real_task_id("study", "sim", i);
  e.kind = ensemble::TaskKind::kReal;
  e.study_id = "study";
  e.priority = 10;
  e.node_id = "sim";
  e.sample = i;
  e.retries = 3;
  e.payload = {{"study_root", "/tmp/ws/study"}};
  return e;
}

void BM_CountTasks(benchmark::State& state) {
  const auto n = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) {
    auto plan = ensemble::plan_hierarchy(n, 25);
    benchmark::DoNotOptimize(plan.count_tasks());
  }
}
BENCHMARK(BM_CountTasks)->Arg(1000)->Arg(1000000)->Arg(40000000);

void BM_ExpandRoot(benchmark::State& state) {
  const auto n = static_cast<std::uint64_t>(state.range(0));
  ensemble::GenerationPayload payload{"/tmp/ws/study", n, 25, 10, 3};
  TaskEnvelope root = ensemble::make_root_envelope("study", "sim", payload, 1);
  auto plan = ensemble::plan_from_payload(root);
  for (auto _ : state) benchmark::DoNotOptimize(ensemble::expand_generation_task(root, plan));
}
BENCHMARK(BM_ExpandRoot)->Arg(25)->Arg(100000);

void BM_SerializeEnvelope(benchmark::State& state) {
  TaskEnvelope e = sample_envelope(42);
  for (auto _ : state) benchmark::DoNotOptimize(ensemble::serialize_envelope(e));
}
BENCHMARK(BM_SerializeEnvelope);

void BM_ParseEnvelope(benchmark::State& state) {
  const std::string text = ensemble::serialize_envelope(sample_envelope(42));
  for (auto _ : state) benchmark::DoNotOptimize(ensemble::parse_envelope(text));
}
BENCHMARK(BM_ParseEnvelope);

void BM_BrokerRoundTrip(benchmark::State& state) {
  ensemble::Broker broker;
  std::uint64_t i = 0;
  for (auto _ : state) {
    broker.enqueue({sample_envelope(i++)});
    auto d = broker.consume("bench", std::chrono::milliseconds(0));
    broker.ack(d->tag, ensemble::AckOutcome{});
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_BrokerRoundTrip);

void BM_ParseSpec(benchmark::State& state) {
  const std::string text =
      "description: sweep\n"
      "env:\n"
      "  OUT: results\n"
      "study:\n"
      "  - name: sim\n"
      "    run: echo $(SAMPLE.x) $(RES) > $(OUT).txt\n"
      "  - name: collect\n"
      "    run: cat $(sim.workspace)/*\n"
      "    depends: [sim_*]\n"
      "parameters:\n"
      "  RES:\n"
      "    values: [1, 2, 4, 8]\n"
      "    label: RES.%%\n"
      "samples:\n"
      "  count: 1000\n"
      "  columns: [x]\n"
      "  branching: 10\n";
  for (auto _ : state) benchmark::DoNotOptimize(ensemble::parse_spec(text));
}
BENCHMARK(BM_ParseSpec);

}  // namespace

BENCHMARK_MAIN();
