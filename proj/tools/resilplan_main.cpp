/* Copyright 2026 The resilplan Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "resilplan/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"resilplan: pipeline-template planner and failure simulator"};
  app.require_subcommand(1);

  std::string profile, cluster, templates, job, trace, out, counts;
  std::optional<std::string> csv;
  int f = 1;
  int nodes = 0;
  bool all = false;
  double horizon_s = 0.0;
  std::uint64_t seed = 0;

  auto* tmpl = app.add_subcommand("templates", "generate pipeline templates");
  tmpl->add_option("--profile", profile, "layer profile JSON")->required();
  tmpl->add_option("--cluster", cluster, "cluster JSON")->required();
  tmpl->add_option("--f", f, "tolerated simultaneous failures")->required();
  tmpl->add_option("--out", out, "template set JSON to write")->required();

  auto* plan = app.add_subcommand("plan", "select an instantiation plan");
  plan->add_option("--templates", templates)->required();
  plan->add_option("--nodes", nodes)->required()->check(CLI::PositiveNumber);
  plan->add_option("--job", job)->required();
  plan->add_flag("--all", all, "list every feasible set");
  plan->add_option("--out", out)->required();

  auto* batch = app.add_subcommand("batch", "distribute the global batch over given pipelines");
  batch->add_option("--templates", templates)->required();
  batch->add_option("--counts", counts, "pipelines per template size, e.g. 1,1,2")->required();
  batch->add_option("--job", job)->required();

  auto* sim = app.add_subcommand("simulate", "replay a node availability trace");
  sim->add_option("--templates", templates)->required();
  sim->add_option("--trace", trace, "JSON-lines event trace")->required();
  sim->add_option("--job", job)->required();
  sim->add_option("--horizon-s", horizon_s)->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed)->required();
  sim->add_option("--out", out)->required();
  sim->add_option("--csv", csv, "throughput series CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  using namespace resilplan::cli;
  if (*tmpl) return cmd_templates(profile, cluster, f, out, std::cout, std::cerr);
  if (*plan) return cmd_plan(templates, nodes, job, all, out, std::cout, std::cerr);
  if (*batch) return cmd_batch(templates, counts, job, std::cout, std::cerr);
  return cmd_simulate(templates, trace, job, horizon_s, seed, out, csv, std::cout, std::cerr);
}
