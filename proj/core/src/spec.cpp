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

#include "ensemble/spec.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ensemble/error.hpp"
#include "ensemble/yaml_subset.hpp"

namespace ensemble {
namespace {

[[noreturn]] void invalid(const std::string& message) {
  throw Error(ErrorCode::kValidation, message);
}

[[noreturn]] void invalid_at(const YamlNode& node, const std::string& message) {
  throw Error(ErrorCode::kValidation, fmt::format("line {}: {}", node.line, message));
}

bool is_identifier(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
           (c >= '0' && c <= '9') || c == '_';
  });
}

const std::string& expect_scalar(const YamlNode& node, std::string_view what) {
  if (!node.is_scalar()) invalid_at(node, fmt::format("'{}' must be a scalar", what));
  return node.scalar;
}

template <typename Int>
Int expect_integer(const YamlNode& node, std::string_view what) {
  const std::string& text = expect_scalar(node, what);
  Int value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    invalid_at(node, fmt::format("'{}' must be an integer, got '{}'", what, text));
  }
  return value;
}

double expect_double(const YamlNode& node, std::string_view what) {
  const std::string& text = expect_scalar(node, what);
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    invalid_at(node, fmt::format("'{}' must be a number, got '{}'", what, text));
  }
  return value;
}

std::vector<std::string> expect_string_list(const YamlNode& node, std::string_view what) {
  if (node.is_scalar() && node.scalar.empty() && !node.quoted) return {};
  if (!node.is_sequence()) invalid_at(node, fmt::format("'{}' must be a sequence", what));
  std::vector<std::string> out;
  for (const YamlNode& item : node.items) out.push_back(expect_scalar(item, what));
  return out;
}

std::vector<double> expect_number_list(const YamlNode& node, std::string_view what) {
  if (node.is_scalar()) return {expect_double(node, what)};
  if (!node.is_sequence() || node.items.empty()) {
    invalid_at(node, fmt::format("'{}' must be a number or a non-empty list", what));
  }
  std::vector<double> out;
  for (const YamlNode& item : node.items) out.push_back(expect_double(item, what));
  return out;
}

void check_keys(const YamlNode& node, std::string_view what,
                std::initializer_list<std::string_view> allowed) {
  if (!node.is_mapping()) invalid_at(node, fmt::format("'{}' must be a mapping", what));
  for (const auto& [key, value] : node.entries) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      invalid_at(value, fmt::format("unknown key '{}' in '{}'", key, what));
    }
  }
}

std::string sanitize_value(std::string_view value) {
  std::string out(value);
  for (char& c : out) {
    if (c == '/' || c == ' ' || c == '\t' || c == '\n' || c == '\r') c = '_';
  }
  return out;
}

bool is_sample_token(std::string_view name) {
  return name == "SAMPLE_ID" || name.starts_with("SAMPLE.");
}

StepDefinition parse_step(const YamlNode& node) {
  check_keys(node, "study step", {"name", "description", "run", "shell", "depends", "mode", "retries"});
  StepDefinition step;
  const YamlNode* name = node.find("name");
  if (name == nullptr) invalid_at(node, "study step is missing 'name'");
  step.name = expect_scalar(*name, "name");
  const YamlNode* run = node.find("run");
  if (run == nullptr) invalid_at(node, fmt::format("step '{}' is missing 'run'", step.name));
  step.command = expect_scalar(*run, "run");
  if (const YamlNode* shell = node.find("shell")) step.shell = expect_scalar(*shell, "shell");
  if (const YamlNode* depends = node.find("depends")) {
    for (std::string& dep : expect_string_list(*depends, "depends")) {
      Dependency d;
      if (dep.size() > 2 && dep.ends_with("_*")) {
        d.step = dep.substr(0, dep.size() - 2);
        d.all_instances = true;
      } else {
        d.step = dep;
      }
      step.depends.push_back(std::move(d));
    }
  }
  if (const YamlNode* retries = node.find("retries")) {
    step.max_retries = expect_integer<int>(*retries, "retries");
    if (step.max_retries < 0) invalid_at(*retries, "'retries' must be non-negative");
  }
  if (const YamlNode* mode = node.find("mode")) {
    const std::string& m = expect_scalar(*mode, "mode");
    if (m == "per_sample") {
      step.run_mode = RunMode::kPerSample;
    } else if (m == "once_per_parameter_set" || m == "once") {
      step.run_mode = RunMode::kOncePerParameterSet;
    } else {
      invalid_at(*mode, fmt::format("unknown mode '{}'", m));
    }
  } else {
    step.run_mode = step.references_samples() ? RunMode::kPerSample
                                              : RunMode::kOncePerParameterSet;
  }
  return step;
}

ParameterBlock parse_parameters(const YamlNode& node) {
  if (!node.is_mapping()) invalid_at(node, "'parameters' must be a mapping");
  ParameterBlock block;
  for (const auto& [name, body] : node.entries) {
    check_keys(body, name, {"values", "label"});
    Parameter p;
    p.name = name;
    const YamlNode* values = body.find("values");
    if (values == nullptr) invalid_at(body, fmt::format("parameter '{}' is missing 'values'", name));
    p.values = expect_string_list(*values, "values");
    if (const YamlNode* label = body.find("label")) {
      p.label_template = expect_scalar(*label, "label");
    } else {
      p.label_template = name + ".%%";
    }
    block.entries.push_back(std::move(p));
  }
  return block;
}

SampleConfig parse_samples(const YamlNode& node) {
  check_keys(node, "samples", {"count", "columns", "source", "branching"});
  SampleConfig config;
  if (const YamlNode* count = node.find("count")) {
    config.count = expect_integer<std::uint64_t>(*count, "count");
  }
  if (const YamlNode* columns = node.find("columns")) {
    config.column_names = expect_string_list(*columns, "columns");
  }
  if (const YamlNode* branching = node.find("branching")) {
    config.branching_factor = expect_integer<int>(*branching, "branching");
  }
  if (const YamlNode* source = node.find("source")) {
    check_keys(*source, "source", {"generator"});
    const YamlNode* gen = source->find("generator");
    if (gen == nullptr) invalid_at(*source, "'source' requires a 'generator' mapping");
    check_keys(*gen, "generator", {"kind", "seed", "min", "max", "path"});
    if (const YamlNode* kind = gen->find("kind")) {
      const std::string& k = expect_scalar(*kind, "kind");
      if (k == "uniform") {
        config.source.kind = SampleSourceKind::kUniform;
      } else if (k == "grid") {
        config.source.kind = SampleSourceKind::kGrid;
      } else if (k == "file") {
        config.source.kind = SampleSourceKind::kFile;
      } else {
        invalid_at(*kind, fmt::format("unknown sample generator kind '{}'", k));
      }
    }
    if (const YamlNode* seed = gen->find("seed")) {
      config.source.seed = expect_integer<std::uint64_t>(*seed, "seed");
    }
    if (const YamlNode* min = gen->find("min")) config.source.min = expect_number_list(*min, "min");
    if (const YamlNode* max = gen->find("max")) config.source.max = expect_number_list(*max, "max");
    if (const YamlNode* path = gen->find("path")) config.source.path = expect_scalar(*path, "path");
  }
  return config;
}

RunConfig parse_run(const YamlNode& node) {
  check_keys(node, "run", {"broker", "workspace", "priority_real", "priority_generation", "message_limit"});
  RunConfig config;
  if (const YamlNode* v = node.find("broker")) config.broker_endpoint = expect_scalar(*v, "broker");
  if (const YamlNode* v = node.find("workspace")) config.workspace_root = expect_scalar(*v, "workspace");
  if (const YamlNode* v = node.find("priority_real")) {
    config.task_priority_real = expect_integer<int>(*v, "priority_real");
  }
  if (const YamlNode* v = node.find("priority_generation")) {
    config.task_priority_generation = expect_integer<int>(*v, "priority_generation");
  }
  if (const YamlNode* v = node.find("message_limit")) {
    config.message_size_limit = expect_integer<std::uint64_t>(*v, "message_limit");
  }
  return config;
}

void validate_steps(const WorkflowSpec& spec) {
  if (spec.steps.empty()) invalid("'study' must declare at least one step");
  std::set<std::string> names;
  for (const StepDefinition& step : spec.steps) {
    if (!is_identifier(step.name)) {
      invalid(fmt::format("step name '{}' must match [A-Za-z0-9_]+", step.name));
    }
    if (!names.insert(step.name).second) invalid(fmt::format("duplicate step name '{}'", step.name));
    if (step.command.empty()) invalid(fmt::format("step '{}' has an empty command", step.name));
    if (step.shell.empty()) invalid(fmt::format("step '{}' has an empty shell", step.name));
  }
  for (const StepDefinition& step : spec.steps) {
    std::set<std::string> seen;
    for (const Dependency& dep : step.depends) {
      if (!names.contains(dep.step)) {
        invalid(fmt::format("step '{}' depends on undeclared step '{}'", step.name, dep.step));
      }
      if (dep.step == step.name) invalid(fmt::format("step '{}' depends on itself", step.name));
      if (!seen.insert(dep.step).second) {
        invalid(fmt::format("step '{}' lists dependency '{}' twice", step.name, dep.step));
      }
    }
  }
  // Cycle check by iterative DFS colouring.
  std::map<std::string, const StepDefinition*> by_name;
  for (const StepDefinition& step : spec.steps) by_name[step.name] = &step;
  std::map<std::string, int> colour;  // 0 white, 1 grey, 2 black
  std::vector<std::string> path;
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    colour[name] = 1;
    path.push_back(name);
    for (const Dependency& dep : by_name[name]->depends) {
      if (colour[dep.step] == 1) {
        auto start = std::find(path.begin(), path.end(), dep.step);
        std::string cycle;
        for (auto it = start; it != path.end(); ++it) cycle += *it + " -> ";
        invalid(fmt::format("dependency cycle: {}{}", cycle, dep.step));
      }
      if (colour[dep.step] == 0) visit(dep.step);
    }
    path.pop_back();
    colour[name] = 2;
  };
  for (const StepDefinition& step : spec.steps) {
    if (colour[step.name] == 0) visit(step.name);
  }
}

void validate_parameters(const ParameterBlock& block) {
  std::optional<std::size_t> length;
  std::set<std::string> names;
  for (const Parameter& p : block.entries) {
    if (!is_identifier(p.name)) invalid(fmt::format("parameter name '{}' must match [A-Za-z0-9_]+", p.name));
    if (!names.insert(p.name).second) invalid(fmt::format("duplicate parameter '{}'", p.name));
    if (p.values.empty()) invalid(fmt::format("parameter '{}' has no values", p.name));
    if (length && *length != p.values.size()) {
      invalid(fmt::format("ragged parameters: '{}' has {} values, expected {}", p.name,
                          p.values.size(), *length));
    }
    length = p.values.size();
    std::size_t first = p.label_template.find("%%");
    if (first == std::string::npos || p.label_template.find("%%", first + 2) != std::string::npos) {
      invalid(fmt::format("label of parameter '{}' must contain exactly one '%%'", p.name));
    }
  }
  std::set<std::string> labels;
  for (std::size_t i = 0; i < block.combinations(); ++i) {
    if (!labels.insert(block.label(i)).second) {
      invalid(fmt::format("parameter combinations {} produce duplicate label '{}'", i, block.label(i)));
    }
  }
}

void validate_samples(const SampleConfig& config) {
  std::set<std::string> columns;
  for (const std::string& c : config.column_names) {
    if (!is_identifier(c)) invalid(fmt::format("sample column '{}' must match [A-Za-z0-9_]+", c));
    if (!columns.insert(c).second) invalid(fmt::format("duplicate sample column '{}'", c));
  }
  if (config.branching_factor < 2) invalid("'branching' must be at least 2");
  const SampleSource& src = config.source;
  if (src.kind != SampleSourceKind::kFile) {
    auto check_len = [&](const std::vector<double>& v, std::string_view what) {
      if (v.size() != 1 && v.size() != config.column_names.size()) {
        invalid(fmt::format("'{}' needs 1 or {} entries, got {}", what,
                            config.column_names.size(), v.size()));
      }
    };
    check_len(src.min, "min");
    check_len(src.max, "max");
  } else if (src.path.empty()) {
    invalid("file sample source requires 'path'");
  }
}

void validate_run(const RunConfig& config) {
  if (config.task_priority_real <= config.task_priority_generation) {
    invalid("'priority_real' must be greater than 'priority_generation'");
  }
  if (config.message_size_limit == 0) invalid("'message_limit' must be positive");
  if (config.workspace_root.empty()) invalid("'workspace' must not be empty");
  if (config.broker_endpoint.empty()) invalid("'broker' must not be empty");
}

void validate_tokens(const WorkflowSpec& spec) {
  Bindings known = spec.env_bindings();
  for (const Parameter& p : spec.parameters.entries) {
    known[p.name];
    known[p.name + ".label"];
  }
  known["WORKSPACE"];
  known["SPEC_ROOT"];
  for (const StepDefinition& step : spec.steps) {
    for (const std::string& token : referenced_tokens(step.command)) {
      if (known.contains(token)) continue;
      if (is_sample_token(token)) {
        if (step.run_mode == RunMode::kOncePerParameterSet) {
          invalid(fmt::format("step '{}' runs once per parameter set but references $({})",
                              step.name, token));
        }
        if (token == "SAMPLE_ID") continue;
        std::string column = token.substr(7);
        const auto& cols = spec.sample_config.column_names;
        if (std::find(cols.begin(), cols.end(), column) != cols.end()) continue;
        invalid(fmt::format("step '{}' references unknown sample column $({})", step.name, token));
      }
      if (token.ends_with(".workspace")) {
        std::string dep = token.substr(0, token.size() - 10);
        bool declared = std::any_of(step.depends.begin(), step.depends.end(),
                                    [&](const Dependency& d) { return d.step == dep; });
        if (declared) continue;
        invalid(fmt::format("step '{}' references $({}) but does not depend on '{}'", step.name,
                            token, dep));
      }
      invalid(fmt::format("step '{}' references unbound token $({})", step.name, token));
    }
  }
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          out += fmt::format("\\u{:04x}", static_cast<unsigned>(c));
        } else {
          out += c;
        }
    }
  }
  out += '"';
  return out;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string number_list(const std::vector<double>& values) {
  if (values.size() == 1) return format_number(values.front());
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_number(values[i]);
  }
  return out + "]";
}

std::string string_list(const std::vector<std::string>& values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += quote(values[i]);
  }
  return out + "]";
}

}  // namespace

std::string_view run_mode_name(RunMode mode) {
  return mode == RunMode::kPerSample ? "per_sample" : "once_per_parameter_set";
}

std::string_view sample_source_kind_name(SampleSourceKind kind) {
  switch (kind) {
    case SampleSourceKind::kUniform: return "uniform";
    case SampleSourceKind::kGrid: return "grid";
    case SampleSourceKind::kFile: return "file";
  }
  return "uniform";
}

bool StepDefinition::references_samples() const {
  auto tokens = referenced_tokens(command);
  return std::any_of(tokens.begin(), tokens.end(),
                     [](const std::string& t) { return is_sample_token(t); });
}

std::size_t ParameterBlock::combinations() const {
  return entries.empty() ? 1 : entries.front().values.size();
}

const Parameter* ParameterBlock::find(std::string_view name) const {
  for (const Parameter& p : entries) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::string ParameterBlock::label(std::size_t index) const {
  std::string out;
  for (const Parameter& p : entries) {
    if (!out.empty()) out += '.';
    std::string piece = p.label_template;
    std::size_t at = piece.find("%%");
    if (at != std::string::npos) piece.replace(at, 2, p.values.at(index));
    out += sanitize_value(piece);
  }
  return out;
}

Bindings ParameterBlock::bindings(std::size_t index) const {
  Bindings out;
  for (const Parameter& p : entries) {
    out[p.name] = p.values.at(index);
    std::string piece = p.label_template;
    std::size_t at = piece.find("%%");
    if (at != std::string::npos) piece.replace(at, 2, p.values.at(index));
    out[p.name + ".label"] = sanitize_value(piece);
  }
  return out;
}

const StepDefinition* WorkflowSpec::find_step(std::string_view name) const {
  for (const StepDefinition& s : steps) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

Bindings WorkflowSpec::env_bindings() const {
  Bindings out;
  for (const auto& [k, v] : env_vars) out[k] = v;
  return out;
}

WorkflowSpec parse_spec(std::string_view text) {
  YamlNode root = parse_yaml_subset(text);
  if (!root.is_mapping()) invalid_at(root, "top level must be a mapping");
  check_keys(root, "document", {"description", "env", "study", "parameters", "samples", "run"});

  WorkflowSpec spec;
  if (const YamlNode* d = root.find("description")) {
    if (d->is_mapping()) {
      // Maestro-style `description: {name: ..., description: ...}`.
      for (const auto& [k, v] : d->entries) {
        if (!spec.description.empty()) spec.description += "\n";
        spec.description += expect_scalar(v, k);
      }
    } else {
      spec.description = expect_scalar(*d, "description");
    }
  }
  if (const YamlNode* env = root.find("env")) {
    if (!(env->is_scalar() && env->scalar.empty())) {
      if (!env->is_mapping()) invalid_at(*env, "'env' must be a mapping");
      for (const auto& [k, v] : env->entries) {
        if (!is_identifier(k)) invalid_at(v, fmt::format("env name '{}' must match [A-Za-z0-9_]+", k));
        spec.env_vars.emplace_back(k, expect_scalar(v, k));
      }
    }
  }
  const YamlNode* study = root.find("study");
  if (study == nullptr) invalid("document is missing 'study'");
  if (!study->is_sequence()) invalid_at(*study, "'study' must be a sequence of steps");
  for (const YamlNode& item : study->items) {
    if (!item.is_mapping()) invalid_at(item, "each study step must be a mapping");
    spec.steps.push_back(parse_step(item));
  }
  if (const YamlNode* params = root.find("parameters")) {
    if (!(params->is_scalar() && params->scalar.empty())) spec.parameters = parse_parameters(*params);
  }
  if (const YamlNode* samples = root.find("samples")) spec.sample_config = parse_samples(*samples);
  if (const YamlNode* run = root.find("run")) spec.run_config = parse_run(*run);

  validate_steps(spec);
  validate_parameters(spec.parameters);
  validate_samples(spec.sample_config);
  validate_run(spec.run_config);
  validate_tokens(spec);
  return spec;
}

std::string to_canonical_text(const WorkflowSpec& spec) {
  std::ostringstream out;
  out << "description: " << quote(spec.description) << "\n";
  if (spec.env_vars.empty()) {
    out << "env: {}\n";
  } else {
    out << "env:\n";
    for (const auto& [k, v] : spec.env_vars) out << "  " << k << ": " << quote(v) << "\n";
  }
  out << "study:\n";
  for (const StepDefinition& s : spec.steps) {
    out << "  - name: " << quote(s.name) << "\n";
    out << "    run: " << quote(s.command) << "\n";
    out << "    shell: " << quote(s.shell) << "\n";
    std::vector<std::string> deps;
    for (const Dependency& d : s.depends) deps.push_back(d.all_instances ? d.step + "_*" : d.step);
    out << "    depends: " << string_list(deps) << "\n";
    out << "    mode: " << quote(run_mode_name(s.run_mode)) << "\n";
    out << "    retries: " << s.max_retries << "\n";
  }
  if (spec.parameters.empty()) {
    out << "parameters: {}\n";
  } else {
    out << "parameters:\n";
    for (const Parameter& p : spec.parameters.entries) {
      out << "  " << p.name << ": {values: " << string_list(p.values)
          << ", label: " << quote(p.label_template) << "}\n";
    }
  }
  const SampleConfig& sc = spec.sample_config;
  out << "samples:\n";
  out << "  count: " << sc.count << "\n";
  out << "  columns: " << string_list(sc.column_names) << "\n";
  out << "  source:\n";
  out << "    generator: {kind: " << quote(sample_source_kind_name(sc.source.kind))
      << ", seed: " << sc.source.seed << ", min: " << number_list(sc.source.min)
      << ", max: " << number_list(sc.source.max) << ", path: " << quote(sc.source.path) << "}\n";
  out << "  branching: " << sc.branching_factor << "\n";
  const RunConfig& rc = spec.run_config;
  out << "run:\n";
  out << "  broker: " << quote(rc.broker_endpoint) << "\n";
  out << "  workspace: " << quote(rc.workspace_root) << "\n";
  out << "  priority_real: " << rc.task_priority_real << "\n";
  out << "  priority_generation: " << rc.task_priority_generation << "\n";
  out << "  message_limit: " << rc.message_size_limit << "\n";
  return out.str();
}

void apply_env_overrides(WorkflowSpec& spec,
                         const std::vector<std::pair<std::string, std::string>>& vars) {
  for (const auto& [name, value] : vars) {
    if (!is_identifier(name)) invalid(fmt::format("variable name '{}' must match [A-Za-z0-9_]+", name));
    auto it = std::find_if(spec.env_vars.begin(), spec.env_vars.end(),
                           [&](const auto& kv) { return kv.first == name; });
    if (it != spec.env_vars.end()) {
      it->second = value;
    } else {
      spec.env_vars.emplace_back(name, value);
    }
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFile, fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kFile, fmt::format("error reading '{}'", path.string()));
  return buffer.str();
}

LoadedSpec load_spec_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::kFile, fmt::format("spec file '{}' does not exist", path.string()));
  }
  LoadedSpec loaded;
  loaded.spec = parse_spec(read_file(path));
  loaded.spec_path = std::filesystem::absolute(path).lexically_normal();
  loaded.spec_root = loaded.spec_path.parent_path();
  return loaded;
}

}  // namespace ensemble
