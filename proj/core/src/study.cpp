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

#include "ensemble/study.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>

#include "ensemble/client.hpp"
#include "ensemble/error.hpp"
#include "ensemble/ids.hpp"

namespace ensemble {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text_file(const fs::path& path, std::string_view text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorCode::kWorkspace, fmt::format("cannot write {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kWorkspace, fmt::format("cannot write {}: {}", path.string(), ec.message()));
}

}  // namespace

std::shared_ptr<const StudyContext> load_study(const fs::path& study_root) {
  const fs::path prov_path = study_root / kProvenanceFile;
  json prov = json::parse(read_file(prov_path), nullptr, false);
  if (prov.is_discarded() || !prov.is_object()) {
    throw Error(ErrorCode::kFile, fmt::format("{} is not valid JSON", prov_path.string()));
  }
  try {
    auto ctx = std::make_shared<StudyContext>();
    ctx->study_id = prov.at("study_id").get<std::string>();
    ctx->root = study_root;
    ctx->spec = parse_spec(prov.at("spec").get<std::string>());
    ctx->spec_root = prov.at("spec_root").get<std::string>();
    ctx->dag = dag_from_json(prov.at("dag"));
    ctx->samples = read_samples_csv(study_root / kSamplesFile);
    return ctx;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFile, fmt::format("{}: {}", prov_path.string(), e.what()));
  }
}

std::shared_ptr<const StudyContext> StudyCache::get(const fs::path& study_root) {
  const std::string key = study_root.string();
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  auto ctx = load_study(study_root);
  std::lock_guard lock(mu_);
  return cache_.emplace(key, std::move(ctx)).first->second;
}

TaskEnvelope node_root_envelope(const StudyContext& ctx, const StepInstance& node) {
  const StepDefinition* step = ctx.spec.find_step(node.step);
  if (!step) throw Error(ErrorCode::kExpansion, fmt::format("node {} names unknown step {}", node.node_id, node.step));
  const RunConfig& run = ctx.spec.run_config;
  if (node.sample_scoped) {
    GenerationPayload payload;
    payload.study_root = ctx.root.string();
    payload.n = ctx.n();
    payload.b = static_cast<std::uint32_t>(ctx.spec.sample_config.branching_factor);
    payload.priority_real = run.task_priority_real;
    payload.max_retries = step->max_retries;
    return make_root_envelope(ctx.study_id, node.node_id, payload, run.task_priority_generation);
  }
  TaskEnvelope e;
  e.task_id = once_task_id(ctx.study_id, node.node_id);
  e.kind = TaskKind::kStepOnce;
  e.study_id = ctx.study_id;
  e.priority = run.task_priority_real;
  e.node_id = node.node_id;
  e.retries = step->max_retries;
  e.payload = {{"study_root", ctx.root.string()}};
  return e;
}

bool node_complete(const StudyContext& ctx, const StepInstance& node, const NodeProgress& progress) {
  if (!node.sample_scoped) return progress.count(TaskKind::kStepOnce, TaskStatus::kSucceeded) > 0;
  if (ctx.n() == 0) return progress.count(TaskKind::kGeneration, TaskStatus::kSucceeded) > 0;
  return progress.samples_succeeded >= ctx.n();
}

std::set<std::string> completed_nodes(const StudyContext& ctx,
                                      const std::map<std::string, NodeProgress>& nodes) {
  std::set<std::string> done;
  for (const StepInstance& node : ctx.dag.nodes()) {
    auto it = nodes.find(node.node_id);
    if (it != nodes.end() && node_complete(ctx, node, it->second)) done.insert(node.node_id);
  }
  return done;
}

fs::path resolve_workspace_root(const fs::path& flag, const WorkflowSpec& spec) {
  fs::path root = flag;
  if (root.empty()) {
    const char* env = std::getenv("ENSEMBLE_WORKSPACE");
    root = env && *env ? fs::path(env) : fs::path(spec.run_config.workspace_root);
  }
  return fs::absolute(root).lexically_normal();
}

StudyPlan enqueue_study(const LoadedSpec& loaded, BrokerClient* broker, const EnqueueOptions& options) {
  const WorkflowSpec& spec = loaded.spec;
  auto ctx = std::make_shared<StudyContext>();
  ctx->study_id = random_id();
  ctx->spec = spec;
  ctx->spec_root = loaded.spec_root;
  ctx->dag = expand(spec);
  ctx->samples = generate_samples(spec.sample_config, loaded.spec_root);
  ctx->root = resolve_workspace_root(options.workspace_root, spec) / ctx->study_id;

  std::error_code ec;
  fs::create_directories(ctx->root, ec);
  if (ec) throw Error(ErrorCode::kWorkspace, fmt::format("cannot create {}: {}", ctx->root.string(), ec.message()));
  write_samples_csv(ctx->samples, ctx->root / kSamplesFile);
  json prov = {{"study_id", ctx->study_id},
               {"created", format_micros(now_micros())},
               {"spec_path", loaded.spec_path.string()},
               {"spec_root", loaded.spec_root.string()},
               {"spec", to_canonical_text(spec)},
               {"dag", dag_to_json(ctx->dag)},
               {"samples", ctx->samples.n()},
               {"branching", spec.sample_config.branching_factor},
               {"dry_run", options.dry_run}};
  write_text_file(ctx->root / kProvenanceFile, prov.dump(2) + "\n");

  StudyPlan plan;
  plan.study_id = ctx->study_id;
  plan.study_root = ctx->root;
  plan.samples = ctx->samples.n();
  plan.nodes = ctx->dag.nodes().size();
  const HierarchyPlan hierarchy = plan_hierarchy(ctx->n(), spec.sample_config.branching_factor);
  const TaskCounts per_node = hierarchy.count_tasks();
  for (const StepInstance& node : ctx->dag.nodes()) {
    if (node.sample_scoped) {
      plan.planned.generation += per_node.generation;
      plan.planned.real += per_node.real;
    } else {
      ++plan.once_tasks;
    }
  }

  std::vector<TaskEnvelope> roots;
  for (const std::string& id : ctx->dag.root_ids()) roots.push_back(node_root_envelope(*ctx, ctx->dag.node(id)));
  for (const TaskEnvelope& e : roots) {
    const std::size_t size = serialize_envelope(e).size();
    if (size > spec.run_config.message_size_limit) {
      throw Error(ErrorCode::kMessageTooLarge, fmt::format("root task for {} is {} bytes, limit is {}",
                                                           e.node_id, size, spec.run_config.message_size_limit));
    }
  }
  if (!options.dry_run) {
    if (!broker) throw Error(ErrorCode::kBrokerUnreachable, "no broker to enqueue into");
    plan.messages = broker->enqueue(roots).accepted;
  }
  return plan;
}

}  // namespace ensemble
