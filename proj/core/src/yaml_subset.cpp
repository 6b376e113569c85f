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

#include "ensemble/yaml_subset.hpp"

#include <cstdint>

#include <fmt/format.h>

#include "ensemble/error.hpp"

namespace ensemble {
namespace {

[[noreturn]] void fail(int line, std::string_view message) {
  throw Error(ErrorCode::kSyntax, fmt::format("line {}: {}", line, message));
}

struct Line {
  int number = 0;
  int indent = 0;
  bool blank = false;  // empty, whitespace-only or comment-only
  std::string raw;
  std::string text;  // raw without indentation
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool is_comment_or_empty(std::string_view s) {
  s = trim(s);
  return s.empty() || s.front() == '#';
}

bool is_seq_item(std::string_view text) {
  return text == "-" || text.starts_with("- ");
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

// Reads a quoted scalar starting at s[pos] (the opening quote). On return pos
// is one past the closing quote.
std::string read_quoted(std::string_view s, std::size_t& pos, int line) {
  const char quote = s[pos++];
  std::string out;
  while (true) {
    if (pos >= s.size()) fail(line, "unterminated quoted scalar");
    char c = s[pos++];
    if (quote == '\'') {
      if (c == '\'') {
        if (pos < s.size() && s[pos] == '\'') {
          out += '\'';
          ++pos;
          continue;
        }
        return out;
      }
      out += c;
      continue;
    }
    if (c == '"') return out;
    if (c != '\\') {
      out += c;
      continue;
    }
    if (pos >= s.size()) fail(line, "dangling escape in quoted scalar");
    char e = s[pos++];
    switch (e) {
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      case '/': out += '/'; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      case '0': out += '\0'; break;
      case 'b': out += '\b'; break;
      case 'f': out += '\f'; break;
      case 'x':
      case 'u':
      case 'U': {
        int digits = e == 'x' ? 2 : (e == 'u' ? 4 : 8);
        std::uint32_t cp = 0;
        for (int i = 0; i < digits; ++i) {
          if (pos >= s.size() || hex_value(s[pos]) < 0) {
            fail(line, "bad hex escape in quoted scalar");
          }
          cp = cp * 16 + static_cast<std::uint32_t>(hex_value(s[pos++]));
        }
        if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
          fail(line, "escape is not a Unicode scalar value");
        }
        append_utf8(out, cp);
        break;
      }
      default:
        fail(line, fmt::format("unknown escape '\\{}'", e));
    }
  }
}

void expect_line_end(std::string_view rest, int line) {
  if (!is_comment_or_empty(rest)) {
    fail(line, fmt::format("unexpected trailing content '{}'", trim(rest)));
  }
}

// Plain scalars end at a " #" comment.
std::string plain_scalar(std::string_view s, int line) {
  std::size_t cut = s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '#' && (i == 0 || s[i - 1] == ' ' || s[i - 1] == '\t')) {
      cut = i;
      break;
    }
  }
  std::string_view value = trim(s.substr(0, cut));
  if (!value.empty()) {
    char c = value.front();
    if (c == '&' || c == '*' || c == '!') {
      fail(line, "anchors, aliases and tags are not supported");
    }
    if (c == '>') fail(line, "folded scalars are not supported");
  }
  return std::string(value);
}

YamlNode scalar_node(std::string value, bool quoted, int line) {
  YamlNode node;
  node.kind = YamlNode::Kind::kScalar;
  node.scalar = std::move(value);
  node.quoted = quoted;
  node.line = line;
  return node;
}

class FlowParser {
 public:
  FlowParser(std::string_view s, int line) : s_(s), line_(line) {}

  YamlNode parse_top() {
    YamlNode node = parse_value(/*in_map_key=*/false);
    expect_line_end(s_.substr(pos_), line_);
    return node;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  YamlNode parse_value(bool in_map_key) {
    skip_ws();
    if (pos_ >= s_.size()) fail(line_, "unterminated flow collection");
    char c = s_[pos_];
    if (c == '[') return parse_sequence();
    if (c == '{') return parse_mapping();
    if (c == '"' || c == '\'') {
      std::string v = read_quoted(s_, pos_, line_);
      return scalar_node(std::move(v), true, line_);
    }
    std::size_t start = pos_;
    while (pos_ < s_.size()) {
      char d = s_[pos_];
      if (d == ',' || d == ']' || d == '}') break;
      if (in_map_key && d == ':') break;
      ++pos_;
    }
    std::string_view raw = trim(s_.substr(start, pos_ - start));
    if (!raw.empty() && (raw.front() == '&' || raw.front() == '*' || raw.front() == '!')) {
      fail(line_, "anchors, aliases and tags are not supported");
    }
    return scalar_node(std::string(raw), false, line_);
  }

  YamlNode parse_sequence() {
    YamlNode node;
    node.kind = YamlNode::Kind::kSequence;
    node.line = line_;
    ++pos_;  // '['
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return node;
    }
    while (true) {
      node.items.push_back(parse_value(false));
      skip_ws();
      if (pos_ >= s_.size()) fail(line_, "unterminated flow sequence");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return node;
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return node;
      }
      fail(line_, "expected ',' or ']' in flow sequence");
    }
  }

  YamlNode parse_mapping() {
    YamlNode node;
    node.kind = YamlNode::Kind::kMapping;
    node.line = line_;
    ++pos_;  // '{'
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '}') {
      ++pos_;
      return node;
    }
    while (true) {
      YamlNode key = parse_value(true);
      if (!key.is_scalar() || key.scalar.empty()) fail(line_, "flow mapping key must be a non-empty scalar");
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != ':') fail(line_, "expected ':' in flow mapping");
      ++pos_;
      for (const auto& [k, v] : node.entries) {
        if (k == key.scalar) fail(line_, fmt::format("duplicate key '{}'", k));
      }
      YamlNode value = parse_value(false);
      node.entries.emplace_back(key.scalar, std::move(value));
      skip_ws();
      if (pos_ >= s_.size()) fail(line_, "unterminated flow mapping");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == '}') {
          ++pos_;
          return node;
        }
        continue;
      }
      if (s_[pos_] == '}') {
        ++pos_;
        return node;
      }
      fail(line_, "expected ',' or '}' in flow mapping");
    }
  }

  std::string_view s_;
  int line_;
  std::size_t pos_ = 0;
};

// Locates the key/value separator of a block mapping entry. Returns npos when
// the text is not a mapping entry.
std::size_t find_key_colon(std::string_view text, int line) {
  if (text.empty()) return std::string_view::npos;
  char first = text.front();
  if (first == '[' || first == '{' || first == '#') return std::string_view::npos;
  std::size_t i = 0;
  if (first == '"' || first == '\'') {
    std::size_t pos = 0;
    read_quoted(text, pos, line);
    i = pos;
    if (i < text.size() && text[i] == ':' &&
        (i + 1 == text.size() || text[i + 1] == ' ')) {
      return i;
    }
    return std::string_view::npos;
  }
  for (; i < text.size(); ++i) {
    if (text[i] == '#' && i > 0 && text[i - 1] == ' ') break;
    if (text[i] == ':' && (i + 1 == text.size() || text[i + 1] == ' ')) return i;
  }
  return std::string_view::npos;
}

class BlockParser {
 public:
  explicit BlockParser(std::string_view text) { split_lines(text); }

  YamlNode parse_document() {
    skip_blank();
    if (eof()) {
      YamlNode empty;
      empty.kind = YamlNode::Kind::kMapping;
      return empty;
    }
    if (lines_[pos_].text == "---") {
      ++pos_;
      skip_blank();
    }
    if (eof()) {
      YamlNode empty;
      empty.kind = YamlNode::Kind::kMapping;
      return empty;
    }
    const Line& first = lines_[pos_];
    if (first.indent != 0) fail(first.number, "document must start at column 0");
    YamlNode root = parse_block(0);
    skip_blank();
    if (!eof()) {
      const Line& l = lines_[pos_];
      if (l.text == "---" || l.text == "...") fail(l.number, "multi-document streams are not supported");
      fail(l.number, "unexpected content (bad indentation?)");
    }
    return root;
  }

 private:
  void split_lines(std::string_view text) {
    int number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string_view raw = text.substr(start, end - start);
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      ++number;
      Line line;
      line.number = number;
      line.raw = std::string(raw);
      std::size_t indent = 0;
      while (indent < raw.size() && raw[indent] == ' ') ++indent;
      line.indent = static_cast<int>(indent);
      line.text = std::string(raw.substr(indent));
      line.blank = is_comment_or_empty(raw);
      if (!line.blank && indent < raw.size() && raw[indent] == '\t') {
        fail(number, "tabs are not allowed in indentation");
      }
      lines_.push_back(std::move(line));
      if (end == text.size()) break;
      start = end + 1;
    }
  }

  bool eof() const { return pos_ >= lines_.size(); }

  void skip_blank() {
    while (!eof() && lines_[pos_].blank) ++pos_;
  }

  void check_indent(const Line& l) const {
    if (l.indent % 2 != 0) fail(l.number, "indentation must be a multiple of 2 spaces");
  }

  YamlNode parse_block(int indent) {
    const Line& l = lines_[pos_];
    check_indent(l);
    if (is_seq_item(l.text)) return parse_sequence(indent);
    return parse_mapping(indent);
  }

  YamlNode parse_mapping(int indent) {
    YamlNode node;
    node.kind = YamlNode::Kind::kMapping;
    node.line = lines_[pos_].number;
    while (true) {
      skip_blank();
      if (eof()) break;
      Line& l = lines_[pos_];
      if (l.indent < indent) break;
      if (l.indent > indent) fail(l.number, "unexpected indentation");
      if (is_seq_item(l.text)) fail(l.number, "sequence item where a mapping key was expected");
      std::size_t colon = find_key_colon(l.text, l.number);
      if (colon == std::string_view::npos) {
        if (l.text == "---" || l.text == "...") fail(l.number, "multi-document streams are not supported");
        fail(l.number, fmt::format("expected 'key: value', got '{}'", l.text));
      }
      std::string_view key_text = trim(std::string_view(l.text).substr(0, colon));
      std::string key;
      if (!key_text.empty() && (key_text.front() == '"' || key_text.front() == '\'')) {
        std::size_t p = 0;
        key = read_quoted(key_text, p, l.number);
      } else {
        key = std::string(key_text);
      }
      if (key.empty()) fail(l.number, "empty mapping key");
      for (const auto& [k, v] : node.entries) {
        if (k == key) fail(l.number, fmt::format("duplicate key '{}'", key));
      }
      std::string rest = l.text.substr(colon + 1);
      int number = l.number;
      ++pos_;
      YamlNode value = parse_value(rest, indent, number, /*same_indent_sequence=*/true);
      node.entries.emplace_back(std::move(key), std::move(value));
    }
    return node;
  }

  YamlNode parse_sequence(int indent) {
    YamlNode node;
    node.kind = YamlNode::Kind::kSequence;
    node.line = lines_[pos_].number;
    while (true) {
      skip_blank();
      if (eof()) break;
      Line& l = lines_[pos_];
      if (l.indent < indent) break;
      if (l.indent > indent) fail(l.number, "unexpected indentation");
      if (!is_seq_item(l.text)) break;
      std::string_view after = std::string_view(l.text).substr(1);
      std::string_view content = after;
      while (!content.empty() && content.front() == ' ') content.remove_prefix(1);
      int column = indent + 1 + static_cast<int>(after.size() - content.size());
      if (is_comment_or_empty(content)) {
        int number = l.number;
        ++pos_;
        node.items.push_back(parse_value("", indent, number, false));
        continue;
      }
      if (is_seq_item(content) ||
          find_key_colon(content, l.number) != std::string_view::npos) {
        // Re-read the remainder of this line as the first line of a nested
        // block whose indentation is the column of its first character.
        l.indent = column;
        l.text = std::string(content);
        node.items.push_back(is_seq_item(content) ? parse_sequence(column)
                                                  : parse_mapping(column));
        continue;
      }
      int number = l.number;
      std::string text(content);
      ++pos_;
      node.items.push_back(parse_value(text, indent, number, false));
    }
    return node;
  }

  YamlNode parse_value(std::string_view rest, int parent_indent, int line,
                       bool same_indent_sequence) {
    std::string_view v = trim(rest);
    if (is_comment_or_empty(v)) {
      skip_blank();
      if (!eof()) {
        const Line& next = lines_[pos_];
        if (next.indent > parent_indent) return parse_block(next.indent);
        if (same_indent_sequence && next.indent == parent_indent && is_seq_item(next.text)) {
          return parse_sequence(parent_indent);
        }
      }
      return scalar_node("", false, line);
    }
    if (v.front() == '|') {
      char chomp = 'c';
      std::size_t i = 1;
      if (i < v.size() && (v[i] == '-' || v[i] == '+')) chomp = v[i++];
      expect_line_end(v.substr(i), line);
      return parse_block_literal(parent_indent, chomp, line);
    }
    if (v.front() == '[' || v.front() == '{') return FlowParser(v, line).parse_top();
    if (v.front() == '"' || v.front() == '\'') {
      std::size_t pos = 0;
      std::string value = read_quoted(v, pos, line);
      expect_line_end(v.substr(pos), line);
      return scalar_node(std::move(value), true, line);
    }
    return scalar_node(plain_scalar(v, line), false, line);
  }

  YamlNode parse_block_literal(int parent_indent, char chomp, int line) {
    std::vector<const Line*> body;
    while (!eof()) {
      const Line& l = lines_[pos_];
      bool whitespace_only = trim(l.raw).empty();
      if (!whitespace_only && l.indent <= parent_indent) break;
      body.push_back(&l);
      ++pos_;
    }
    int content_indent = -1;
    for (const Line* l : body) {
      if (!trim(l->raw).empty()) {
        content_indent = l->indent;
        break;
      }
    }
    std::string out;
    if (content_indent >= 0) {
      for (const Line* l : body) {
        if (trim(l->raw).empty()) {
          out += '\n';
          continue;
        }
        if (l->indent < content_indent) fail(l->number, "block literal line is less indented than its first line");
        out += l->raw.substr(static_cast<std::size_t>(content_indent));
        out += '\n';
      }
    }
    // Trailing whitespace-only lines that belong to the literal were appended
    // as bare newlines; chomping decides how many survive.
    if (chomp != '+') {
      while (!out.empty() && out.back() == '\n') out.pop_back();
      if (chomp == 'c' && !out.empty()) out += '\n';
    }
    return scalar_node(std::move(out), true, line);
  }

  std::vector<Line> lines_;
  std::size_t pos_ = 0;
};

}  // namespace

const YamlNode* YamlNode::find(std::string_view key) const {
  if (kind != Kind::kMapping) return nullptr;
  for (const auto& [k, v] : entries) {
    if (k == key) return &v;
  }
  return nullptr;
}

bool is_valid_utf8(std::string_view text) {
  std::size_t i = 0;
  const auto* s = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  while (i < n) {
    unsigned char c = s[i];
    if (c < 0x80) {
      ++i;
      continue;
    }
    int extra;
    std::uint32_t cp;
    if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + static_cast<std::size_t>(extra) >= n) return false;
    for (int k = 1; k <= extra; ++k) {
      unsigned char d = s[i + static_cast<std::size_t>(k)];
      if ((d & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (d & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

YamlNode parse_yaml_subset(std::string_view text) {
  if (!is_valid_utf8(text)) throw Error(ErrorCode::kSyntax, "line 1: document is not valid UTF-8");
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  return BlockParser(text).parse_document();
}

}  // namespace ensemble
