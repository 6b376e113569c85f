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
#include <initializer_list>
#include <string>
#include <string_view>

namespace ensemble {

/// 128 random bits from the OS entropy source, as 32 lowercase hex digits.
std::string random_id();

/// 128-bit FNV-1a over the parts (each followed by a 0x1f separator), as 32
/// hex digits. Equal parts give equal ids; the broker drops the repeats.
std::string stable_id(std::initializer_list<std::string_view> parts);

/// Wall-clock microseconds since the Unix epoch (UTC).
std::int64_t now_micros();

/// RFC 3339 rendering of now_micros() values, e.g. 2026-10-15T09:30:00.123456Z.
std::string format_micros(std::int64_t micros);

}  // namespace ensemble
