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

#include "ensemble/sampler.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "ensemble/error.hpp"

namespace ensemble {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

double bound_for(const std::vector<double>& bounds, std::size_t column) {
  return bounds.size() == 1 ? bounds.front() : bounds.at(column);
}

std::size_t grid_points(std::uint64_t n, std::size_t columns) {
  if (n <= 1 || columns == 0) return n == 0 ? 0 : 1;
  std::size_t m = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(n), 1.0 / columns)));
  if (m < 1) m = 1;
  auto covers = [&](std::size_t pts) {
    long double total = 1;
    for (std::size_t c = 0; c < columns; ++c) total *= pts;
    return total >= static_cast<long double>(n);
  };
  while (m > 1 && covers(m - 1)) --m;
  while (!covers(m)) ++m;
  return m;
}

// RFC 4180 records. An empty line is a record with one empty field.
std::vector<std::vector<std::string>> parse_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  std::size_t i = 0;
  std::size_t line = 1;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
    records.push_back(std::move(record));
    record.clear();
  };
  while (i < text.size()) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        in_quotes = false;
        ++i;
        continue;
      }
      if (c == '\n') ++line;
      field += c;
      ++i;
      continue;
    }
    if (c == '"') {
      if (!field.empty() || field_was_quoted) {
        throw Error(ErrorCode::kFile, fmt::format("line {}: stray quote in CSV field", line));
      }
      in_quotes = true;
      field_was_quoted = true;
      ++i;
      continue;
    }
    if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_was_quoted = false;
      ++i;
      continue;
    }
    if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      ++i;
      continue;
    }
    if (c == '\n') {
      end_record();
      ++line;
      ++i;
      continue;
    }
    field += c;
    ++i;
  }
  if (in_quotes) throw Error(ErrorCode::kFile, "unterminated quoted CSV field");
  if (!field.empty() || field_was_quoted || !record.empty()) end_record();
  return records;
}

bool needs_quotes(std::string_view field) {
  return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view field) {
  if (!needs_quotes(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

}  // namespace

Xoshiro256StarStar::Xoshiro256StarStar(std::uint64_t seed) {
  for (auto& word : state_) word = splitmix64(seed);
}

std::uint64_t Xoshiro256StarStar::next() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Xoshiro256StarStar::next_unit() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::string format_sample_value(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

SampleSet generate_samples(const SampleConfig& config, const std::filesystem::path& spec_root) {
  const SampleSource& src = config.source;
  SampleSet set;
  set.columns = config.column_names;
  const std::size_t cols = set.columns.size();

  if (src.kind == SampleSourceKind::kFile) {
    std::filesystem::path path = src.path;
    if (path.is_relative() && !spec_root.empty()) path = spec_root / path;
    SampleSet loaded = read_samples_csv(path);
    if (!config.column_names.empty()) {
      if (loaded.columns.size() != cols) {
        throw Error(ErrorCode::kFile,
                    fmt::format("'{}' has {} columns but the spec declares {}", path.string(),
                                loaded.columns.size(), cols));
      }
      loaded.columns = config.column_names;
    }
    return loaded;
  }

  for (std::size_t c = 0; c < cols; ++c) {
    double lo = bound_for(src.min, c);
    double hi = bound_for(src.max, c);
    if (!(lo < hi)) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("column '{}': min ({}) must be less than max ({})", set.columns[c], lo, hi));
    }
  }
  set.rows.reserve(config.count);

  if (src.kind == SampleSourceKind::kUniform) {
    Xoshiro256StarStar rng(src.seed);
    for (std::uint64_t r = 0; r < config.count; ++r) {
      std::vector<std::string> row;
      row.reserve(cols);
      for (std::size_t c = 0; c < cols; ++c) {
        double lo = bound_for(src.min, c);
        double hi = bound_for(src.max, c);
        double v = lo + (hi - lo) * rng.next_unit();
        if (v >= hi) v = std::nextafter(hi, lo);
        row.push_back(format_sample_value(v));
      }
      set.rows.push_back(std::move(row));
    }
    return set;
  }

  const std::size_t m = grid_points(config.count, cols);
  std::vector<std::size_t> digit(cols, 0);
  for (std::uint64_t r = 0; r < config.count; ++r) {
    std::vector<std::string> row;
    row.reserve(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      double lo = bound_for(src.min, c);
      double hi = bound_for(src.max, c);
      double v = lo;
      if (m > 1) {
        v = digit[c] + 1 == m ? hi
                              : lo + (hi - lo) * (static_cast<double>(digit[c]) /
                                                  static_cast<double>(m - 1));
      }
      row.push_back(format_sample_value(v));
    }
    set.rows.push_back(std::move(row));
    for (std::size_t c = cols; c-- > 0;) {
      if (++digit[c] < m) break;
      digit[c] = 0;
    }
  }
  return set;
}

Bindings sample_bindings(const SampleSet& samples, std::size_t index) {
  if (index >= samples.n()) {
    throw Error(ErrorCode::kIndex,
                fmt::format("sample index {} out of range [0, {})", index, samples.n()));
  }
  Bindings out;
  out["SAMPLE_ID"] = std::to_string(index);
  const auto& row = samples.rows[index];
  for (std::size_t c = 0; c < samples.columns.size(); ++c) {
    out["SAMPLE." + samples.columns[c]] = row.at(c);
  }
  return out;
}

std::string samples_to_csv(const SampleSet& samples) {
  std::string out;
  for (std::size_t c = 0; c < samples.columns.size(); ++c) {
    if (c) out += ',';
    append_field(out, samples.columns[c]);
  }
  out += '\n';
  for (const auto& row : samples.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      append_field(out, row[c]);
    }
    out += '\n';
  }
  return out;
}

SampleSet samples_from_csv(std::string_view text) {
  auto records = parse_records(text);
  if (records.empty()) throw Error(ErrorCode::kFile, "CSV has no header row");
  SampleSet set;
  const bool no_columns = records.front().size() == 1 && records.front().front().empty();
  if (!no_columns) set.columns = records.front();
  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& rec = records[r];
    if (no_columns) {
      if (!(rec.size() == 1 && rec.front().empty())) {
        throw Error(ErrorCode::kFile, fmt::format("row {} has fields but the header has none", r));
      }
      set.rows.emplace_back();
      continue;
    }
    if (rec.size() != set.columns.size()) {
      throw Error(ErrorCode::kFile, fmt::format("ragged CSV: row {} has {} fields, header has {}", r,
                                                rec.size(), set.columns.size()));
    }
    set.rows.push_back(std::move(rec));
  }
  return set;
}

void write_samples_csv(const SampleSet& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kFile, fmt::format("cannot write '{}'", path.string()));
  out << samples_to_csv(samples);
  if (!out.flush()) throw Error(ErrorCode::kFile, fmt::format("error writing '{}'", path.string()));
}

SampleSet read_samples_csv(const std::filesystem::path& path) {
  return samples_from_csv(read_file(path));
}

}  // namespace ensemble
