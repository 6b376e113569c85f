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

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "ensemble/error.hpp"
#include "ensemble/hierarchy.hpp"

namespace ensemble {
namespace {

GenerationPayload payload_for(std::uint64_t n, std::uint32_t b) {
  GenerationPayload p;
  p.study_root = "/tmp/study";
  p.n = n;
  p.b = b;
  p.priority_real = 10;
  p.max_retries = 2;
  return p;
}

struct Expansion {
  std::uint64_t generation = 0;
  std::vector<std::uint64_t> samples;
  std::uint32_t max_level = 0;
  std::set<std::string> ids;
};

// Drives expand_generation_task to the leaves, breadth first.
Expansion expand_fully(std::uint64_t n, std::uint32_t b) {
  const HierarchyPlan plan = plan_hierarchy(n, b);
  Expansion out;
  std::vector<std::pair<TaskEnvelope, std::uint32_t>> frontier{
      {make_root_envelope("s", "node", payload_for(n, b), 1), 1}};
  while (!frontier.empty()) {
    auto [task, level] = frontier.back();
    frontier.pop_back();
    ++out.generation;
    out.max_level = std::max(out.max_level, level);
    EXPECT_TRUE(out.ids.insert(task.task_id).second);
    auto children = expand_generation_task(task, plan);
    EXPECT_LE(children.size(), b);
    std::uint64_t cursor = task.range->lo;
    for (TaskEnvelope& child : children) {
      if (child.kind == TaskKind::kReal) {
        EXPECT_EQ(*child.sample, cursor++);
        EXPECT_EQ(child.priority, 10);
        EXPECT_TRUE(out.ids.insert(child.task_id).second);
        out.samples.push_back(*child.sample);
      } else {
        EXPECT_EQ(child.range->lo, cursor);
        EXPECT_GT(child.range->width(), 0u);
        cursor = child.range->hi;
        EXPECT_EQ(child.priority, 1);
        frontier.emplace_back(std::move(child), level + 1);
      }
    }
    EXPECT_EQ(cursor, task.range->hi);
  }
  return out;
}

// Counts from the splitting rule alone: a width above b splits into
// c = ceil(w / ceil(w / b)) parts, w mod c of them one wider.
TaskCounts oracle_counts(std::uint64_t w, std::uint64_t b) {
  if (w <= b) return {1, w};
  const std::uint64_t c = (w + ((w + b - 1) / b) - 1) / ((w + b - 1) / b);
  TaskCounts total{1, 0};
  for (std::uint64_t i = 0; i < c; ++i) {
    TaskCounts sub = oracle_counts(w / c + (i < w % c ? 1 : 0), b);
    total.generation += sub.generation;
    total.real += sub.real;
  }
  return total;
}

TEST(Hierarchy, NineSamplesBranchingThree) {
  HierarchyPlan plan = plan_hierarchy(9, 3);
  EXPECT_EQ(plan.depth, 2u);
  auto mids = plan.split(plan.root_range());
  EXPECT_EQ(mids, (std::vector<SampleRange>{{0, 3}, {3, 6}, {6, 9}}));
  EXPECT_EQ(plan.count_tasks(), (TaskCounts{4, 9}));
  EXPECT_EQ(plan.count_tasks().total(), 13u);
  Expansion e = expand_fully(9, 3);
  EXPECT_EQ(e.generation, 4u);
  EXPECT_EQ(e.samples.size(), 9u);
}

TEST(Hierarchy, SingleSample) {
  HierarchyPlan plan = plan_hierarchy(1, 3);
  EXPECT_EQ(plan.depth, 1u);
  EXPECT_EQ(plan.count_tasks(), (TaskCounts{1, 1}));
  EXPECT_EQ(plan_hierarchy(0, 3).depth, 1u);
  EXPECT_EQ(plan_hierarchy(0, 3).count_tasks(), (TaskCounts{1, 0}));
}

TEST(Hierarchy, TwentySevenSamplesBranchingThree) {
  HierarchyPlan plan = plan_hierarchy(27, 3);
  EXPECT_EQ(plan.depth, 3u);
  Expansion e = expand_fully(27, 3);
  EXPECT_EQ(e.generation, 13u);
  EXPECT_EQ(e.samples.size(), 27u);
  EXPECT_EQ(plan.count_tasks().total(), 40u);
}

TEST(Hierarchy, LeafRangeEmitsRealTasks) {
  HierarchyPlan plan = plan_hierarchy(9, 3);
  TaskEnvelope root = make_root_envelope("s", "n", payload_for(9, 3), 1);
  root.range = SampleRange{0, 3};
  auto children = expand_generation_task(root, plan);
  ASSERT_EQ(children.size(), 3u);
  for (std::uint64_t i = 0; i < 3; ++i) {
    EXPECT_EQ(children[i].kind, TaskKind::kReal);
    EXPECT_EQ(*children[i].sample, i);
    EXPECT_FALSE(children[i].range.has_value());
    EXPECT_EQ(children[i].retries, 2);
  }
}

TEST(Hierarchy, TenSamplesSplitIntoThreeNearEqualChildren) {
  HierarchyPlan plan = plan_hierarchy(10, 3);
  auto children = plan.split(plan.root_range());
  ASSERT_EQ(children.size(), 3u);
  std::vector<std::uint64_t> widths;
  for (const SampleRange& r : children) widths.push_back(r.width());
  EXPECT_EQ(widths, (std::vector<std::uint64_t>{4, 3, 3}));
  Expansion e = expand_fully(10, 3);
  std::sort(e.samples.begin(), e.samples.end());
  std::vector<std::uint64_t> expected(10);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(e.samples, expected);
}

TEST(Hierarchy, BranchingBelowTwoIsConfigError) {
  try {
    plan_hierarchy(5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Hierarchy, MalformedGenerationEnvelope) {
  HierarchyPlan plan = plan_hierarchy(9, 3);
  TaskEnvelope task = make_root_envelope("s", "n", payload_for(9, 3), 1);
  task.payload.erase("n");
  EXPECT_THROW(expand_generation_task(task, plan), Error);
  TaskEnvelope real = make_root_envelope("s", "n", payload_for(9, 3), 1);
  real.kind = TaskKind::kReal;
  EXPECT_THROW(expand_generation_task(real, plan), Error);
  TaskEnvelope wide = make_root_envelope("s", "n", payload_for(9, 3), 1);
  wide.range = SampleRange{0, 12};
  EXPECT_THROW(expand_generation_task(wide, plan), Error);
}

TEST(Hierarchy, ReexpansionIsDeterministic) {
  HierarchyPlan plan = plan_hierarchy(100, 4);
  TaskEnvelope root = make_root_envelope("s", "n", payload_for(100, 4), 1);
  EXPECT_EQ(expand_generation_task(root, plan), expand_generation_task(root, plan));
}

TEST(HierarchyProperty, CoverageAndUniqueness) {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint64_t n = 1 + rng() % 10000;
    const std::uint32_t b = 2 + static_cast<std::uint32_t>(rng() % 63);
    Expansion e = expand_fully(n, b);
    std::vector<std::uint64_t> sorted = e.samples;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::uint64_t> expected(n);
    std::iota(expected.begin(), expected.end(), 0);
    ASSERT_EQ(sorted, expected) << "n=" << n << " b=" << b;
    const HierarchyPlan plan = plan_hierarchy(n, b);
    const TaskCounts counts = plan.count_tasks();
    EXPECT_EQ(counts.generation, e.generation);
    EXPECT_EQ(counts.real, n);
    EXPECT_EQ(counts, oracle_counts(n, b));
    EXPECT_LE(e.max_level, plan.depth);
    // depth is the smallest L >= 1 with b^L >= n
    long double reach = 1;
    std::uint32_t depth = 0;
    do {
      reach *= b;
      ++depth;
    } while (reach < static_cast<long double>(n));
    EXPECT_EQ(plan.depth, depth);
  }
}

TEST(HierarchyProperty, SplitsAreContiguousAndNearEqual) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::uint32_t b = 2 + static_cast<std::uint32_t>(rng() % 63);
    const std::uint64_t lo = rng() % 1000;
    const std::uint64_t w = b + 1 + rng() % 100000;
    HierarchyPlan plan = plan_hierarchy(lo + w, b);
    auto parts = plan.split({lo, lo + w});
    ASSERT_GE(parts.size(), 2u);
    ASSERT_LE(parts.size(), b);
    std::uint64_t cursor = lo;
    std::uint64_t min_w = w;
    std::uint64_t max_w = 0;
    for (const SampleRange& r : parts) {
      ASSERT_EQ(r.lo, cursor);
      ASSERT_GT(r.width(), 0u);
      min_w = std::min(min_w, r.width());
      max_w = std::max(max_w, r.width());
      cursor = r.hi;
    }
    EXPECT_EQ(cursor, lo + w);
    EXPECT_LE(max_w - min_w, 1u);
  }
}

// For complete trees (n = b^k) the generation count meets the closed form.
TEST(HierarchyProperty, CompleteTreesMeetGenerationBound) {
  for (std::uint64_t b = 2; b <= 6; ++b) {
    std::uint64_t n = b;
    for (int k = 1; k <= 5; ++k, n *= b) {
      const TaskCounts c = plan_hierarchy(n, static_cast<std::int64_t>(b)).count_tasks();
      EXPECT_EQ(c.generation, (n - 1) / (b - 1));
      EXPECT_LE(c.generation, (n - 1) / (b - 1) + 1);
    }
  }
}

TEST(HierarchyProperty, RealPriorityExceedsGeneration) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t n = 1 + rng() % 500;
    const std::uint32_t b = 2 + static_cast<std::uint32_t>(rng() % 10);
    const HierarchyPlan plan = plan_hierarchy(n, b);
    std::vector<TaskEnvelope> stack{make_root_envelope("s", "n", payload_for(n, b), 1)};
    while (!stack.empty()) {
      TaskEnvelope t = stack.back();
      stack.pop_back();
      for (TaskEnvelope& c : expand_generation_task(t, plan)) {
        if (c.kind == TaskKind::kReal) {
          EXPECT_GT(c.priority, t.priority);
        } else {
          stack.push_back(std::move(c));
        }
      }
    }
  }
}

}  // namespace
}  // namespace ensemble
