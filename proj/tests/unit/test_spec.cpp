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

#include <gtest/gtest.h>

#include <random>

#include <fmt/format.h>

#include "ensemble/error.hpp"
#include "ensemble/spec.hpp"
#include "test_util.hpp"

namespace ensemble {
namespace {

const char* kSimCollect =
    "description: two steps\n"
    "study:\n"
    "  - name: sim\n"
    "    run: echo $(ITER) $(SAMPLE.x)\n"
    "  - name: collect\n"
    "    run: cat $(sim.workspace)/out\n"
    "    depends: [sim_*]\n"
    "parameters:\n"
    "  ITER:\n"
    "    values: [1, 2]\n"
    "    label: ITER.%%\n"
    "samples:\n"
    "  count: 4\n"
    "  columns: [x]\n";

ErrorCode error_of(const std::string& text, std::string* message = nullptr) {
  try {
    parse_spec(text);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "spec parsed but should not have:\n" << text;
  return ErrorCode::kProtocol;
}

TEST(Spec, MinimalStudy) {
  WorkflowSpec spec = parse_spec(kSimCollect);
  ASSERT_EQ(spec.steps.size(), 2u);
  EXPECT_EQ(spec.parameters.combinations(), 2u);
  EXPECT_EQ(spec.steps[1].depends.at(0).step, "sim");
  EXPECT_TRUE(spec.steps[1].depends.at(0).all_instances);
  EXPECT_EQ(spec.steps[0].run_mode, RunMode::kPerSample);
  EXPECT_EQ(spec.steps[1].run_mode, RunMode::kOncePerParameterSet);
  EXPECT_EQ(spec.parameters.label(1), "ITER.2");
}

TEST(Spec, Defaults) {
  WorkflowSpec spec = parse_spec("study:\n  - name: a\n    run: true\n");
  EXPECT_EQ(spec.steps[0].shell, "/bin/sh");
  EXPECT_EQ(spec.steps[0].max_retries, 3);
  EXPECT_EQ(spec.sample_config.branching_factor, 25);
  EXPECT_EQ(spec.run_config.task_priority_real, 10);
  EXPECT_EQ(spec.run_config.task_priority_generation, 1);
  EXPECT_EQ(spec.run_config.broker_endpoint, "local:");
  EXPECT_EQ(spec.run_config.message_size_limit, 64u * 1024 * 1024);
  EXPECT_EQ(spec.parameters.combinations(), 1u);
}

TEST(Spec, DanglingDependencyNamesTheStep) {
  std::string message;
  EXPECT_EQ(error_of("study:\n"
                     "  - name: sim\n"
                     "    run: a\n"
                     "  - name: collect\n"
                     "    run: b\n"
                     "    depends: [sym]\n",
                     &message),
            ErrorCode::kValidation);
  EXPECT_NE(message.find("sym"), std::string::npos);
}

TEST(Spec, RaggedParameters) {
  std::string message;
  EXPECT_EQ(error_of("study:\n"
                     "  - name: a\n"
                     "    run: echo $(P) $(Q)\n"
                     "parameters:\n"
                     "  P:\n"
                     "    values: [1, 2]\n"
                     "  Q:\n"
                     "    values: [1, 2, 3]\n",
                     &message),
            ErrorCode::kValidation);
  EXPECT_NE(message.find("ragged parameters"), std::string::npos);
}

TEST(Spec, ValidationFailures) {
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\n  - name: a\n    run: y\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\n    depends: [b]\n  - name: b\n    run: y\n    depends: [a]\n"),
            ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\n    depends: [a]\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: bad-name\n    run: x\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: \"\"\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\nsamples:\n  branching: 1\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\nrun:\n  priority_real: 1\n  priority_generation: 1\n"),
            ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\nrun:\n  message_limit: 0\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\n    colour: red\n"), ErrorCode::kValidation);
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: echo $(P)\nparameters:\n  P:\n    values: [1]\n    label: P\n"),
            ErrorCode::kValidation);
  // once steps cannot see samples
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: echo $(SAMPLE_ID)\n    mode: once\nsamples:\n  count: 2\n"),
            ErrorCode::kValidation);
  // unknown tokens are caught before anything runs
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: echo $(NOPE)\n"), ErrorCode::kValidation);
  // a workspace token needs a declared dependency
  EXPECT_EQ(error_of("study:\n  - name: a\n    run: x\n  - name: b\n    run: ls $(a.workspace)\n"),
            ErrorCode::kValidation);
}

TEST(Spec, SyntaxErrorsKeepTheirCode) {
  std::string message;
  EXPECT_EQ(error_of("study:\n  - name: a\n   run: x\n", &message), ErrorCode::kSyntax);
  EXPECT_NE(message.find("line 3"), std::string::npos);
}

TEST(Spec, EnvOverrides) {
  WorkflowSpec spec = parse_spec("env:\n  ITER: \"1\"\nstudy:\n  - name: a\n    run: echo $(ITER)\n");
  apply_env_overrides(spec, {{"ITER", "3"}, {"EXTRA", "x"}});
  Bindings b = spec.env_bindings();
  EXPECT_EQ(b.at("ITER"), "3");
  EXPECT_EQ(b.at("EXTRA"), "x");
  EXPECT_EQ(spec.env_vars.front().first, "ITER");
}

TEST(Spec, LoadMissingFileNamesThePath) {
  try {
    load_spec_file("/nonexistent/dir/spec.yaml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFile);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/spec.yaml"), std::string::npos);
  }
}

TEST(Spec, LoadResolvesSpecRoot) {
  testing::TempDir dir;
  testing::write_text(dir / "s.yaml", "study:\n  - name: a\n    run: ls $(SPEC_ROOT)\n");
  LoadedSpec loaded = load_spec_file(dir / "s.yaml");
  EXPECT_EQ(loaded.spec_root, std::filesystem::canonical(dir.path()));
}

// Random well-formed specs survive canonical serialization unchanged.
std::string random_spec(std::mt19937_64& rng) {
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  std::string text = fmt::format("description: \"study {} with: colon # and hash\"\n", pick(1000));
  const int n_env = pick(3);
  if (n_env > 0) {
    text += "env:\n";
    for (int i = 0; i < n_env; ++i) text += fmt::format("  E{}: \"v {}'\\\"\"\n", i, pick(100));
  }
  const int k = 1 + pick(3);
  const int n_params = pick(3);
  if (n_params > 0) {
    text += "parameters:\n";
    for (int p = 0; p < n_params; ++p) {
      text += fmt::format("  P{}:\n    values: [", p);
      for (int i = 0; i < k; ++i) text += fmt::format("{}{}", i ? ", " : "", p * 10 + i);
      text += fmt::format("]\n    label: \"P{}.%%\"\n", p);
    }
  }
  const int n_steps = 1 + pick(4);
  text += "study:\n";
  for (int s = 0; s < n_steps; ++s) {
    text += fmt::format("  - name: s{}\n", s);
    std::string cmd = fmt::format("echo step {}", s);
    if (n_params > 0 && pick(2)) cmd += fmt::format(" $(P{})", pick(n_params));
    if (n_env > 0 && pick(2)) cmd += fmt::format(" $(E{})", pick(n_env));
    const bool per_sample = pick(2) == 1;
    if (per_sample) cmd += " $(SAMPLE_ID) $(SAMPLE.c0)";
    std::vector<int> deps;
    for (int d = 0; d < s; ++d) {
      if (pick(3) == 0) deps.push_back(d);
    }
    if (pick(2)) {
      text += fmt::format("    run: |\n      {}\n      echo second line\n", cmd);
    } else {
      text += fmt::format("    run: \"{}\"\n", cmd);
    }
    if (!deps.empty()) {
      text += "    depends: [";
      for (std::size_t i = 0; i < deps.size(); ++i) {
        text += fmt::format("{}s{}{}", i ? ", " : "", deps[i], pick(2) ? "_*" : "");
      }
      text += "]\n";
    }
    text += fmt::format("    mode: {}\n", per_sample ? "per_sample" : "once_per_parameter_set");
    text += fmt::format("    retries: {}\n", pick(5));
    if (pick(3) == 0) text += "    shell: /bin/bash\n";
  }
  text += fmt::format("samples:\n  count: {}\n  columns: [c0, c1]\n  branching: {}\n", pick(50), 2 + pick(30));
  text += "  source:\n    generator:\n      kind: uniform\n      seed: 5\n      min: [0, -1]\n      max: [1, 2.5]\n";
  text += fmt::format("run:\n  priority_real: {}\n  priority_generation: 2\n", 3 + pick(10));
  return text;
}

TEST(SpecProperty, CanonicalRoundTripAndDeterminism) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::string text = random_spec(rng);
    WorkflowSpec a = parse_spec(text);
    WorkflowSpec b = parse_spec(text);
    ASSERT_EQ(a, b) << text;
    const std::string canonical = to_canonical_text(a);
    WorkflowSpec c = parse_spec(canonical);
    ASSERT_EQ(a, c) << "original:\n" << text << "\ncanonical:\n" << canonical;
    EXPECT_EQ(to_canonical_text(c), canonical);
  }
}

}  // namespace
}  // namespace ensemble
