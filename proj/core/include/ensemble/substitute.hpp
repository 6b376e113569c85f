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

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ensemble {

/// Token name → replacement text.
using Bindings = std::map<std::string, std::string, std::less<>>;

/// Replaces every `$(NAME)` with its binding in a single left-to-right pass;
/// replacement text is never rescanned. `$$` yields a literal `$`. A `$` that
/// does not start `$(NAME)` (shell `$VAR`, `$((1+2))`) is copied through.
/// NAME is `[A-Za-z0-9_.]+`.
///
/// Throws Error(kUnboundToken) naming the token, and `context` (the step)
/// when given, if a referenced NAME has no binding.
std::string substitute(std::string_view tmpl, const Bindings& bindings,
                       std::string_view context = {});

/// Like substitute() but leaves unbound tokens and `$$` escapes untouched,
/// so the output can go through another pass later. Used when expanding
/// parameters into commands whose sample tokens are bound at execution time.
std::string substitute_partial(std::string_view tmpl, const Bindings& bindings);

/// Token names referenced by `tmpl`, in order of first appearance.
std::vector<std::string> referenced_tokens(std::string_view tmpl);

bool is_token_name(std::string_view name);

}  // namespace ensemble
