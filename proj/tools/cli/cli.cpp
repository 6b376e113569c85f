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

#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "bench.hpp"
#include "ensemble/broker.hpp"
#include "ensemble/client.hpp"
#include "ensemble/error.hpp"
#include "ensemble/server.hpp"
#include "ensemble/spec.hpp"
#include "ensemble/study.hpp"
#include "ensemble/worker.hpp"

namespace ensemble::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace {

constexpr const char* kDefaultAddr = "127.0.0.1:7077";

fs::path self_exe() {
  std::error_code ec;
  fs::path p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::path() : p;
}

std::vector<std::pair<std::string, std::string>> parse_vars(const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> vars;
  for (const std::string& v : raw) {
    auto eq = v.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kConfig, fmt::format("--var expects NAME=VALUE, got '{}'", v));
    }
    vars.emplace_back(v.substr(0, eq), v.substr(eq + 1));
  }
  return vars;
}

LoadedSpec load_with_overrides(const std::string& path, const std::vector<std::string>& vars) {
  LoadedSpec loaded = load_spec_file(path);
  if (!vars.empty()) apply_env_overrides(loaded.spec, parse_vars(vars));
  return loaded;
}

std::string broker_for(const std::string& flag, const std::string& configured) {
  return flag.empty() ? resolve_broker_endpoint(configured) : flag;
}

std::string step_of(const std::string& node_id) { return node_id.substr(0, node_id.find('/')); }

std::string study_state(const BrokerStats& stats, const StudyContext* ctx) {
  if (ctx && completed_nodes(*ctx, stats.nodes).size() == ctx->dag.nodes().size()) return "completed";
  if (stats.ready + stats.unacked > 0) return "running";
  auto dead = stats.status_counts.find("dead");
  if (dead != stats.status_counts.end() && dead->second > 0) return "stalled-failed";
  return "idle";
}

json status_json(const std::string& study_id, const BrokerStats& stats, const StudyContext* ctx) {
  json steps = json::object();
  for (const auto& [node, progress] : stats.nodes) {
    json& step = steps[step_of(node)];
    if (step.is_null()) step = json::object();
    for (const auto& [key, n] : progress.counts) {
      const std::string status = key.substr(key.find('.') + 1);
      step[status] = step.value(status, std::uint64_t{0}) + n;
    }
  }
  return {{"study_id", study_id},
          {"state", study_state(stats, ctx)},
          {"study_root", stats.study_root},
          {"ready", stats.ready},
          {"unacked", stats.unacked},
          {"enqueued", stats.counters.enqueued},
          {"delivered", stats.counters.delivered},
          {"succeeded", stats.counters.succeeded},
          {"failed", stats.counters.failed},
          {"dead", stats.counters.dead},
          {"totals", stats.status_counts},
          {"steps", steps}};
}

void print_status(std::ostream& out, const json& s) {
  fmt::print(out, "study {} [{}]\n", s["study_id"].get<std::string>(), s["state"].get<std::string>());
  for (const auto& [step, counts] : s["steps"].items()) {
    std::string line;
    for (const auto& [status, n] : counts.items()) line += fmt::format(" {}={}", status, n.get<std::uint64_t>());
    fmt::print(out, "  {}:{}\n", step, line);
  }
  std::string totals;
  for (const auto& [status, n] : s["totals"].items()) totals += fmt::format(" {}={}", status, n.get<std::uint64_t>());
  fmt::print(out, "  total:{}\n", totals);
  fmt::print(out, "  queue: ready={} unacked={}\n", s["ready"].get<std::uint64_t>(), s["unacked"].get<std::uint64_t>());
}

std::shared_ptr<const StudyContext> try_load(const std::string& root) {
  if (root.empty()) return nullptr;
  try {
    return load_study(root);
  } catch (const Error&) {
    return nullptr;
  }
}

struct RunArgs {
  std::string spec;
  bool dry_run = false;
  std::string broker;
  std::string workspace;
  std::vector<std::string> vars;
  int workers = 1;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
  LoadedSpec loaded = load_with_overrides(a.spec, a.vars);
  const std::string endpoint = broker_for(a.broker, loaded.spec.run_config.broker_endpoint);
  EnqueueOptions options;
  options.dry_run = a.dry_run;
  options.workspace_root = a.workspace;

  if (a.dry_run) {
    StudyPlan plan = enqueue_study(loaded, nullptr, options);
    fmt::print(out, "study {} (dry run)\nworkspace {}\n", plan.study_id, plan.study_root.string());
    fmt::print(out, "{} tasks ({} generation, {} real, {} step_once)\n", plan.total_tasks(),
               plan.planned.generation, plan.planned.real, plan.once_tasks);
    return kExitOk;
  }

  std::unique_ptr<BrokerClient> client = connect_broker(endpoint);
  StudyPlan plan = enqueue_study(loaded, client.get(), options);
  fmt::print(out, "study {}\nworkspace {}\n", plan.study_id, plan.study_root.string());
  fmt::print(out, "enqueued {} messages for {} tasks\n", plan.messages, plan.total_tasks());
  out.flush();
  if (!client->is_local()) return kExitOk;

  // Local broker: drain the study in this process.
  WorkerConfig config;
  config.broker = shared_local_broker();
  config.concurrency = a.workers;
  config.exit_when_drained = true;
  config.workspace_root = plan.study_root.parent_path();
  config.exe_path = self_exe();
  config.stop_flag = &stop_requested();
  WorkerPool pool(config);
  pool.run();
  BrokerStats stats = client->stats(plan.study_id);
  auto ctx = try_load(plan.study_root.string());
  json s = status_json(plan.study_id, stats, ctx.get());
  print_status(out, s);
  return s["state"] == "completed" ? kExitOk : kExitUser;
}

struct WorkerArgs {
  std::string spec;
  int workers = 1;
  int bundle = 1;
  double idle_exit = 0.0;
  std::string broker;
  std::string workspace;
};

int cmd_run_workers(const WorkerArgs& a, std::ostream& out) {
  LoadedSpec loaded = load_spec_file(a.spec);
  WorkerConfig config;
  config.broker_endpoint = broker_for(a.broker, loaded.spec.run_config.broker_endpoint);
  config.concurrency = a.workers;
  config.bundle_size = a.bundle;
  if (a.idle_exit > 0) {
    config.idle_exit = std::chrono::milliseconds(static_cast<std::int64_t>(a.idle_exit * 1000));
  }
  config.workspace_root = resolve_workspace_root(a.workspace, loaded.spec);
  config.exe_path = self_exe();
  config.stop_flag = &stop_requested();
  if (parse_endpoint(config.broker_endpoint).local) config.exit_when_drained = true;
  connect_broker(config.broker_endpoint)->ping();
  WorkerPool pool(config);
  fmt::print(out, "worker {} with {} slots on {}\n", pool.worker_id(), a.workers, config.broker_endpoint);
  out.flush();
  WorkerSummary s = pool.run();
  fmt::print(out, "processed {} tasks ({} generation, {} executed, {} failed)\n", s.processed, s.generation,
             s.executed, s.failed);
  return s.unreachable ? kExitUnreachable : kExitOk;
}

struct ServeArgs {
  std::string addr = kDefaultAddr;
  std::string data;
  double lease = 600.0;
  bool no_fsync = false;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  Endpoint e = parse_endpoint(a.addr);
  if (e.local) throw Error(ErrorCode::kConfig, "serve needs HOST:PORT");
  BrokerOptions options;
  options.data_dir = a.data;
  options.fsync = !a.no_fsync;
  options.lease = std::chrono::milliseconds(static_cast<std::int64_t>(a.lease * 1000));
  Broker broker(options);
  BrokerServer server(broker, e.host, e.port);
  server.start();
  fmt::print(out, "listening on {}\n", server.endpoint());
  out.flush();
  while (!stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  broker.shutdown();
  return kExitOk;
}

int cmd_status(const std::string& study, bool as_json, const std::string& broker, std::ostream& out) {
  auto client = connect_broker(broker_for(broker, std::string(kLocalEndpoint)));
  BrokerStats stats = client->stats(study);
  if (!stats.known_study) throw Error(ErrorCode::kUnknownStudy, fmt::format("unknown study '{}'", study));
  auto ctx = try_load(stats.study_root);
  json s = status_json(study, stats, ctx.get());
  if (as_json) {
    out << canonical_json(s) << "\n";
  } else {
    print_status(out, s);
  }
  return kExitOk;
}

int cmd_resubmit(const std::string& study, const std::string& scope, const std::string& broker, std::ostream& out) {
  auto client = connect_broker(broker_for(broker, std::string(kLocalEndpoint)));
  ResubmitScope s = scope == "failed" ? ResubmitScope::kFailed : ResubmitScope::kMissing;
  std::size_t n = resubmit(*client, study, s);
  fmt::print(out, "{} tasks resubmitted\n", n);
  return kExitOk;
}

int cmd_purge(const std::string& study, bool all, const std::string& broker, std::ostream& out) {
  if (study.empty() && !all) throw Error(ErrorCode::kConfig, "purge needs --study STUDY or --all");
  auto client = connect_broker(broker_for(broker, std::string(kLocalEndpoint)));
  std::size_t n = client->purge(all ? std::nullopt : std::optional<std::string>(study));
  fmt::print(out, "{} tasks purged\n", n);
  return kExitOk;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      values.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfig, fmt::format("{} expects a comma-separated list of integers", flag));
    }
  }
  return values;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const char* level = std::getenv("ENSEMBLE_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::warn);
  }

  CLI::App app{"ensemble: hierarchical ensemble workflow runner"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Enqueue a study");
  run_cmd->add_flag("--dry-run", run.dry_run, "Expand and sample without enqueuing");
  run_cmd->add_option("--broker", run.broker, "Broker endpoint (local: or HOST:PORT)");
  run_cmd->add_option("--workspace", run.workspace, "Workspace root directory");
  run_cmd->add_option("--var", run.vars, "Override an env variable, NAME=VALUE");
  run_cmd->add_option("--workers", run.workers, "Slots used when the broker is local:")->check(CLI::PositiveNumber);
  run_cmd->add_option("SPEC", run.spec, "Workflow spec file")->required();

  WorkerArgs workers;
  auto* workers_cmd = app.add_subcommand("run-workers", "Consume and execute tasks");
  workers_cmd->add_option("--workers", workers.workers, "Task slots")->check(CLI::PositiveNumber);
  workers_cmd->add_option("--bundle", workers.bundle, "Samples per real-task execution")->check(CLI::PositiveNumber);
  workers_cmd->add_option("--idle-exit", workers.idle_exit, "Exit after this many idle seconds");
  workers_cmd->add_option("--broker", workers.broker, "Broker endpoint");
  workers_cmd->add_option("--workspace", workers.workspace, "Workspace root directory");
  workers_cmd->add_option("SPEC", workers.spec, "Workflow spec file")->required();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the broker service");
  serve_cmd->add_option("--addr", serve.addr, "Listen address HOST:PORT");
  serve_cmd->add_option("--data", serve.data, "Persistence directory (in-memory when absent)");
  serve_cmd->add_option("--lease", serve.lease, "Delivery lease in seconds");
  serve_cmd->add_flag("--no-fsync", serve.no_fsync, "Skip fdatasync on the op log");

  std::string study;
  std::string broker;
  bool as_json = false;
  auto* status_cmd = app.add_subcommand("status", "Show study progress");
  status_cmd->add_flag("--json", as_json, "Canonical JSON output");
  status_cmd->add_option("--broker", broker, "Broker endpoint");
  status_cmd->add_option("STUDY", study, "Study id")->required();

  std::string scope;
  auto* resubmit_cmd = app.add_subcommand("resubmit", "Re-enqueue failed or missing tasks");
  resubmit_cmd->add_option("--scope", scope, "failed or missing")
      ->required()
      ->check(CLI::IsMember({"failed", "missing"}));
  resubmit_cmd->add_option("--broker", broker, "Broker endpoint");
  resubmit_cmd->add_option("STUDY", study, "Study id")->required();

  bool purge_all = false;
  auto* purge_cmd = app.add_subcommand("purge", "Drop queued tasks");
  purge_cmd->add_option("--study", study, "Study id");
  purge_cmd->add_flag("--all", purge_all, "Every study");
  purge_cmd->add_option("--broker", broker, "Broker endpoint");

  std::string scenario;
  std::string n_list;
  std::string workers_list;
  bench::BenchOptions bench_options;
  auto* bench_cmd = app.add_subcommand("bench", "Null-workflow benchmarks as CSV");
  bench_cmd->add_option("SCENARIO", scenario, "enqueue, startup, overhead or scaling")->required();
  bench_cmd->add_option("--n", n_list, "Sample counts, comma-separated");
  bench_cmd->add_option("--b", bench_options.b, "Branching factor");
  bench_cmd->add_option("--workers", workers_list, "Worker counts, comma-separated");
  bench_cmd->add_option("--sleep", bench_options.sleep, "Null simulation length in seconds");
  bench_cmd->add_option("--trials", bench_options.trials, "Trials per configuration")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    if (*run_cmd) return cmd_run(run, out);
    if (*workers_cmd) return cmd_run_workers(workers, out);
    if (*serve_cmd) return cmd_serve(serve, out);
    if (*status_cmd) return cmd_status(study, as_json, broker, out);
    if (*resubmit_cmd) return cmd_resubmit(study, scope, broker, out);
    if (*purge_cmd) return cmd_purge(study, purge_all, broker, out);
    if (*bench_cmd) {
      bench_options.scenario = scenario;
      if (!n_list.empty()) bench_options.n = parse_list<std::uint64_t>(n_list, "--n");
      if (!workers_list.empty()) bench_options.workers = parse_list<int>(workers_list, "--workers");
      bench_options.exe_path = self_exe();
      bench::run_bench(bench_options, out);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kBrokerUnreachable ? kExitUnreachable : kExitUser;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUser;
  }
  return kExitUser;
}

}  // namespace ensemble::cli
