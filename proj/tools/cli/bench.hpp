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

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace ensemble::bench {

struct BenchOptions {
  std::string scenario;
  std::vector<std::uint64_t> n;
  std::uint32_t b = 0;  // 0: scenario default
  std::vector<int> workers;
  double sleep = 1.0;
  int trials = 3;
  std::filesystem::path exe_path;
};

inline constexpr const char* kCsvHeader = "scenario,n,b,workers,trial,metric,value";

/// Runs the null workflow for one scenario and writes CSV rows to `out`.
/// kConfig for an unknown scenario.
void run_bench(BenchOptions options, std::ostream& out);

}  // namespace ensemble::bench
