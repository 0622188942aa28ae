// Copyright 2026 The ICL Subspace Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// icl_lab: run bundled experiments, list them, or verify the acceptance suite.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "icl/acceptance.h"
#include "icl/errors.h"
#include "icl/experiment_harness.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitSchema = 2;

int RunCommand(const std::string& config, const std::optional<std::string>& out,
               int threads, const std::optional<uint64_t>& seed) {
  icl::RunOptions options;
  if (out) options.out_dir = *out;
  options.threads = threads;
  options.seed_override = seed;
  const icl::RunReport report = icl::RunSuite(config, options);
  for (const auto& f : report.files) fmt::print("wrote {}\n", f.string());
  for (const auto& n : report.notes) fmt::print(stderr, "note: {}\n", n);
  fmt::print("done in {:.2f} s\n", report.wall_seconds);
  return kExitOk;
}

int ListCommand() {
  for (const auto& e : icl::BundledExperiments()) {
    fmt::print("{:<16} {:<38} {:<20} configs/{}.json  {}\n", e.id, e.figure, e.kind, e.id,
               e.description);
  }
  return kExitOk;
}

int VerifyCommand(const std::string& config, std::optional<int> threads) {
  icl::AcceptanceOptions options = icl::LoadAcceptanceConfig(config);
  if (threads) options.threads = *threads;
  bool all = true;
  icl::RunAcceptance(options, [&](const icl::CriterionResult& r) {
    all = all && r.passed;
    fmt::print("{}\n", icl::FormatCriterion(r));
    std::fflush(stdout);
  });
  fmt::print("{}\n", all ? "acceptance: all criteria passed" : "acceptance: FAILED");
  return all ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICL subspace lab: covariance-shift experiments for linear attention"};
  app.set_version_flag("--version", std::string(icl::kToolVersion));
  app.require_subcommand(1);

  std::string run_config;
  std::optional<std::string> out_dir;
  int threads = 1;
  std::optional<uint64_t> seed;
  CLI::App* run = app.add_subcommand("run", "run every experiment in a configuration file");
  run->add_option("config", run_config, "experiment configuration (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (default: $ICL_LAB_OUT, then config)");
  run->add_option("--threads", threads, "Monte Carlo worker threads (0 = all cores)")
      ->check(CLI::Range(0, 1024));
  run->add_option("--seed", seed, "override every experiment's seed");

  app.add_subcommand("list", "list bundled experiment configurations");

  std::string verify_config;
  std::optional<int> verify_threads;
  CLI::App* verify = app.add_subcommand("verify", "run the acceptance suite");
  verify->add_option("config", verify_config, "acceptance configuration (JSON)")->required();
  verify->add_option("--threads", verify_threads, "worker threads")->check(CLI::Range(0, 1024));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return RunCommand(run_config, out_dir, threads, seed);
    if (app.got_subcommand("list")) return ListCommand();
    if (*verify) return VerifyCommand(verify_config, verify_threads);
  } catch (const icl::SchemaError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitSchema;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
