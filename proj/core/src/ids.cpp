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

#include "ensemble/ids.hpp"

#include <chrono>
#include <ctime>
#include <random>

#include <fmt/format.h>

namespace ensemble {

std::string random_id() {
  thread_local std::random_device device;
  std::uint64_t hi = (std::uint64_t{device()} << 32) | device();
  std::uint64_t lo = (std::uint64_t{device()} << 32) | device();
  return fmt::format("{:016x}{:016x}", hi, lo);
}

std::string stable_id(std::initializer_list<std::string_view> parts) {
  using u128 = unsigned __int128;
  const u128 prime = (u128{0x0000000001000000ULL} << 64) | 0x000000000000013BULL;
  u128 hash = (u128{0x6c62272e07bb0142ULL} << 64) | 0x62b821756295c58dULL;
  auto mix = [&](unsigned char c) {
    hash ^= c;
    hash *= prime;
  };
  for (std::string_view part : parts) {
    for (char c : part) mix(static_cast<unsigned char>(c));
    mix(0x1f);
  }
  return fmt::format("{:016x}{:016x}", static_cast<std::uint64_t>(hash >> 64),
                     static_cast<std::uint64_t>(hash));
}

std::int64_t now_micros() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch())
      .count();
}

std::string format_micros(std::int64_t micros) {
  std::time_t seconds = static_cast<std::time_t>(micros / 1'000'000);
  std::tm tm{};
  gmtime_r(&seconds, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z",
                     tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                     tm.tm_min, tm.tm_sec, micros % 1'000'000);
}

}  // namespace ensemble
