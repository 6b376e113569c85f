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

#include "ensemble/substitute.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ensemble/error.hpp"

namespace ensemble {
namespace {

bool is_token_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
         (c >= '0' && c <= '9') || c == '_' || c == '.';
}

// If tmpl[pos] starts `$(NAME)`, returns the length of the whole token and
// stores NAME; otherwise returns 0.
std::size_t match_token(std::string_view tmpl, std::size_t pos, std::string_view& name) {
  if (pos + 2 >= tmpl.size() || tmpl[pos] != '$' || tmpl[pos + 1] != '(') return 0;
  std::size_t end = pos + 2;
  while (end < tmpl.size() && is_token_char(tmpl[end])) ++end;
  if (end == pos + 2 || end >= tmpl.size() || tmpl[end] != ')') return 0;
  name = tmpl.substr(pos + 2, end - pos - 2);
  return end - pos + 1;
}

enum class Mode { kStrict, kPartial };

std::string run(std::string_view tmpl, const Bindings& bindings,
                std::string_view context, Mode mode) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    char c = tmpl[i];
    if (c != '$') {
      out += c;
      ++i;
      continue;
    }
    if (i + 1 < tmpl.size() && tmpl[i + 1] == '$') {
      out += mode == Mode::kStrict ? "$" : "$$";
      i += 2;
      continue;
    }
    std::string_view name;
    std::size_t len = match_token(tmpl, i, name);
    if (len == 0) {
      out += c;
      ++i;
      continue;
    }
    auto it = bindings.find(name);
    if (it != bindings.end()) {
      out += it->second;
    } else if (mode == Mode::kPartial) {
      out.append(tmpl.substr(i, len));
    } else if (context.empty()) {
      throw Error(ErrorCode::kUnboundToken, fmt::format("no binding for $({})", name));
    } else {
      throw Error(ErrorCode::kUnboundToken,
                  fmt::format("no binding for $({}) in step '{}'", name, context));
    }
    i += len;
  }
  return out;
}

}  // namespace

std::string substitute(std::string_view tmpl, const Bindings& bindings,
                       std::string_view context) {
  return run(tmpl, bindings, context, Mode::kStrict);
}

std::string substitute_partial(std::string_view tmpl, const Bindings& bindings) {
  return run(tmpl, bindings, {}, Mode::kPartial);
}

std::vector<std::string> referenced_tokens(std::string_view tmpl) {
  std::vector<std::string> names;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '$') {
      ++i;
      continue;
    }
    if (i + 1 < tmpl.size() && tmpl[i + 1] == '$') {
      i += 2;
      continue;
    }
    std::string_view name;
    std::size_t len = match_token(tmpl, i, name);
    if (len == 0) {
      ++i;
      continue;
    }
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      names.emplace_back(name);
    }
    i += len;
  }
  return names;
}

bool is_token_name(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), is_token_char);
}

}  // namespace ensemble
