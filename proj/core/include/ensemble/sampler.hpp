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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ensemble/spec.hpp"
#include "ensemble/substitute.hpp"

namespace ensemble {

/// xoshiro256** seeded through splitmix64, as published by Blackman and
/// Vigna. Fixed here so sample tables are reproducible from (seed, bounds,
/// count) in any implementation.
class Xoshiro256StarStar {
 public:
  explicit Xoshiro256StarStar(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform double in [0, 1) from the top 53 bits.
  double next_unit();

 private:
  std::array<std::uint64_t, 4> state_;
};

/// N rows × C columns of decimal strings.
struct SampleSet {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t n() const { return rows.size(); }
  bool operator==(const SampleSet&) const = default;
};

/// Shortest decimal string that parses back to exactly `value`.
std::string format_sample_value(double value);

/// Builds the sample table. Uniform draws are taken row-major (every column
/// of row 0, then row 1, ...) and lie in [min, max). Grid tables use
/// m = ceil(n^(1/C)) evenly spaced points per column including both
/// endpoints, enumerated with the last column fastest, truncated to n rows.
/// File tables are read from CSV; relative paths resolve against spec_root.
///
/// Errors: kConfig when min >= max for a generator; kFile for a missing,
/// unreadable or ragged CSV.
SampleSet generate_samples(const SampleConfig& config,
                           const std::filesystem::path& spec_root = {});

/// {SAMPLE_ID: "<index>", SAMPLE.<col>: value...}; kIndex when out of range.
Bindings sample_bindings(const SampleSet& samples, std::size_t index);

/// CSV with a header row, '\n' line endings; fields quoted only when needed.
std::string samples_to_csv(const SampleSet& samples);
SampleSet samples_from_csv(std::string_view text);

void write_samples_csv(const SampleSet& samples, const std::filesystem::path& path);
SampleSet read_samples_csv(const std::filesystem::path& path);

}  // namespace ensemble
