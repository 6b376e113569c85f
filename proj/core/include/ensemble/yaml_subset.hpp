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

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ensemble {

/// One node of a workflow document. The accepted language is a strict YAML
/// subset: block mappings and sequences with 2-space indentation, single-line
/// flow collections (`[a, b]`, `{k: v}`), plain/quoted scalars and `|`
/// block literals. Anchors, aliases, tags, folded scalars and multi-document
/// streams are rejected.
struct YamlNode {
  enum class Kind { kScalar, kSequence, kMapping };

  Kind kind = Kind::kScalar;
  int line = 0;
  std::string scalar;
  bool quoted = false;  // scalar came from a quoted or block-literal form
  std::vector<YamlNode> items;
  std::vector<std::pair<std::string, YamlNode>> entries;

  bool is_scalar() const { return kind == Kind::kScalar; }
  bool is_sequence() const { return kind == Kind::kSequence; }
  bool is_mapping() const { return kind == Kind::kMapping; }

  /// Mapping lookup; nullptr when absent or when this node is not a mapping.
  const YamlNode* find(std::string_view key) const;
};

/// Parses a document; throws Error(kSyntax) with the 1-based line number in
/// the message. An empty document yields an empty mapping.
YamlNode parse_yaml_subset(std::string_view text);

/// Checks UTF-8 well-formedness (no overlongs, no surrogates).
bool is_valid_utf8(std::string_view text);

}  // namespace ensemble
