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

// Subcommand bodies for the resilplan tool. Each takes explicit paths and
// streams so tests can drive them without spawning a process. A module error
// becomes one JSON object on `err` and exit status 1.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "resilplan/json_io.hpp"

namespace resilplan::cli {

namespace detail {

template <typename Fn>
int run_guarded(std::ostream& err, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    err << error_json(e).dump() << '\n';
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
  }
  return 1;
}

inline void write_json(const std::string& path, const json& j) {
  resilplan::detail::write_text_file(path, j.dump(2) + "\n");
}

inline PlanContext load_context_for_job(const std::string& templates_path, const JobConfig& job) {
  PlanContext ctx = load_plan_context(templates_path);
  resilplan::detail::require(job.f == ctx.spec().f, ErrorCode::kInvalidArgument,
                             "job f=" + std::to_string(job.f) + " differs from template f=" +
                                 std::to_string(ctx.spec().f));
  return ctx;
}

inline std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> counts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 0) {
      throw Error(ErrorCode::kInvalidArgument, "bad counts entry '" + item + "'");
    }
    counts.push_back(v);
  }
  return counts;
}

}  // namespace detail

inline int cmd_templates(const std::string& profile_path, const std::string& cluster_path,
                         int f, const std::string& out_path, std::ostream& out,
                         std::ostream& err) {
  return detail::run_guarded(err, [&] {
    LayerProfileSet profile = load_profile(profile_path);
    ClusterSpec cluster = load_cluster(cluster_path);
    resilplan::detail::require(f >= 0, ErrorCode::kInvalidArgument, "f must be >= 0");
    resilplan::detail::require(cluster.gpus_per_node == profile.gpus_per_node(),
                               ErrorCode::kInvalidArgument,
                               "cluster and profile disagree on gpus_per_node");
    const int n0 = min_nodes(profile, cluster, kDefaultMemoryUtilization,
                             profile.microbatch_reference());
    const auto warnings = profile.monotonicity_warnings();
    const PlanContext ctx = build_plan_context(std::move(profile), cluster, f, n0);
    detail::write_json(out_path, to_json(ctx));
    json summary = {{"n0", ctx.spec().n0}, {"p", ctx.spec().p()}, {"sizes", ctx.spec().sizes}};
    if (!warnings.empty()) summary["warnings"] = warnings;
    out << summary.dump() << '\n';
  });
}

inline int cmd_plan(const std::string& templates_path, int nodes, const std::string& job_path,
                    bool all, const std::string& out_path, std::ostream& out,
                    std::ostream& err) {
  return detail::run_guarded(err, [&] {
    const JobConfig job = load_job(job_path);
    const PlanContext ctx = detail::load_context_for_job(templates_path, job);
    resilplan::detail::require(nodes >= 1, ErrorCode::kInvalidArgument, "--nodes must be >= 1");
    if (all) {
      json candidates = json::array();
      for (const auto& c : evaluate_candidates(ctx.templates, nodes, job)) {
        candidates.push_back(to_json(c));
      }
      json doc = {{"nodes", nodes}, {"candidates", candidates}};
      std::optional<Error> failure;
      try {
        doc["selected"] = to_json(select_plan(ctx.templates, nodes, job));
      } catch (const Error& e) {
        doc["selected"] = nullptr;
        failure = e;
      }
      detail::write_json(out_path, doc);
      out << json{{"candidates", candidates.size()}}.dump() << '\n';
      if (failure) throw *failure;
      return;
    }
    const InstantiationPlan plan = select_plan(ctx.templates, nodes, job);
    detail::write_json(out_path, to_json(plan));
    out << json{{"counts", plan.set.counts},
                {"iteration_ms", plan.iteration_ms},
                {"throughput_sps", plan.throughput_sps}}
               .dump()
        << '\n';
  });
}

inline int cmd_batch(const std::string& templates_path, const std::string& counts_text,
                     const std::string& job_path, std::ostream& out, std::ostream& err) {
  return detail::run_guarded(err, [&] {
    const JobConfig job = load_job(job_path);
    const PlanContext ctx = detail::load_context_for_job(templates_path, job);
    FeasibleSet set{detail::parse_counts(counts_text)};
    resilplan::detail::require(
        static_cast<int>(set.counts.size()) == ctx.spec().p(), ErrorCode::kInvalidArgument,
        "--counts needs " + std::to_string(ctx.spec().p()) + " entries");
    resilplan::detail::require(set.total_pipelines() >= 1, ErrorCode::kInvalidArgument,
                               "--counts selects no pipelines");
    InstantiationPlan plan = evaluate_pipelines(ctx.templates, expand_pipelines(ctx.spec(), set), job);
    plan.set = set;
    json doc = to_json(plan);
    doc["nodes"] = set.total_nodes(ctx.spec());
    out << doc.dump(2) << '\n';
  });
}

inline int cmd_simulate(const std::string& templates_path, const std::string& trace_path,
                        const std::string& job_path, double horizon_s, std::uint64_t seed,
                        const std::string& out_path, const std::optional<std::string>& csv_path,
                        std::ostream& out, std::ostream& err) {
  return detail::run_guarded(err, [&] {
    SimConfig cfg;
    cfg.job = load_job(job_path);
    cfg.horizon_s = horizon_s;
    cfg.seed = seed;
    const PlanContext ctx = detail::load_context_for_job(templates_path, cfg.job);
    const auto trace = load_trace(trace_path);
    const SimReport report = run_sim(ctx, cfg, trace);
    detail::write_json(out_path, to_json(report));
    if (csv_path) resilplan::detail::write_text_file(*csv_path, series_csv(report));
    // Reaching the checkpoint floor is a modeled outcome, not a tool failure.
    out << json{{"avg_throughput_sps", report.avg_throughput_sps},
                {"breakdown",
                 {{"training", report.breakdown.training},
                  {"reconfiguration", report.breakdown.reconfiguration},
                  {"fallback", report.breakdown.fallback}}},
                {"exit", exit_kind_name(report.exit.kind)}}
               .dump()
        << '\n';
  });
}

}  // namespace resilplan::cli
