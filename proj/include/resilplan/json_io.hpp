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

#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resilplan/cost_model.hpp"
#include "resilplan/error.hpp"
#include "resilplan/instantiation.hpp"
#include "resilplan/reconfig.hpp"
#include "resilplan/simulator.hpp"
#include "resilplan/template_gen.hpp"

namespace resilplan {

using json = nlohmann::json;

namespace detail {

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParse, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  out << text;
}

// Wraps nlohmann's type errors so every malformed input surfaces as kParse.
template <typename Fn>
auto parse_guard(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, what + ": " + e.what());
  }
}

}  // namespace detail

// ---- profile / cluster / job -------------------------------------------

inline json to_json(const LayerProfileSet& profile) {
  json layers = json::array();
  for (const auto& l : profile.layers()) {
    json fwd = json::object();
    json bwd = json::object();
    for (std::size_t d = 0; d < l.fwd_ms.size(); ++d) {
      fwd[std::to_string(d + 1)] = l.fwd_ms[d];
      bwd[std::to_string(d + 1)] = l.bwd_ms[d];
    }
    layers.push_back({{"name", l.name},
                      {"state_bytes", l.state_bytes},
                      {"activation_bytes_per_sample", l.activation_bytes_per_sample},
                      {"fwd_ms", fwd},
                      {"bwd_ms", bwd}});
  }
  return {{"gpus_per_node", profile.gpus_per_node()},
          {"microbatch_reference", profile.microbatch_reference()},
          {"layers", layers}};
}

inline LayerProfileSet profile_from_json(const json& j) {
  return detail::parse_guard("profile", [&] {
    const int gpus = j.at("gpus_per_node").get<int>();
    const int reference = j.value("microbatch_reference", 1);
    std::vector<LayerProfile> layers;
    const json& arr = j.at("layers");
    if (!arr.is_array()) throw Error(ErrorCode::kParse, "profile: layers must be an array");
    if (arr.empty()) throw Error(ErrorCode::kEmptyModel, "empty model");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const json& jl = arr[i];
      LayerProfile l;
      l.name = jl.value("name", "layer" + std::to_string(i));
      l.state_bytes = jl.at("state_bytes").get<std::int64_t>();
      l.activation_bytes_per_sample = jl.value("activation_bytes_per_sample", std::int64_t{0});
      for (int d = 1; d <= gpus; ++d) {
        const std::string key = std::to_string(d);
        if (!jl.at("fwd_ms").contains(key) || !jl.at("bwd_ms").contains(key)) {
          throw Error(ErrorCode::kMissingDeviceEntry,
                      "missing device-count entry " + key + " in layer " + std::to_string(i));
        }
        l.fwd_ms.push_back(jl.at("fwd_ms").at(key).get<double>());
        l.bwd_ms.push_back(jl.at("bwd_ms").at(key).get<double>());
      }
      layers.push_back(std::move(l));
    }
    return LayerProfileSet(std::move(layers), gpus, reference);
  });
}

inline LayerProfileSet load_profile(const std::string& path) {
  return profile_from_json(detail::read_json_file(path));
}

inline void save_profile(const std::string& path, const LayerProfileSet& profile) {
  detail::write_text_file(path, to_json(profile).dump(2) + "\n");
}

inline json to_json(const ClusterSpec& c) {
  return {{"nodes", c.nodes},
          {"gpus_per_node", c.gpus_per_node},
          {"gpu_mem_bytes", c.gpu_mem_bytes},
          {"xfer_gbps", c.xfer_gbps},
          {"coord_overhead_ms", c.coord_overhead_ms}};
}

inline ClusterSpec cluster_from_json(const json& j) {
  return detail::parse_guard("cluster", [&] {
    ClusterSpec c;
    c.nodes = j.at("nodes").get<int>();
    c.gpus_per_node = j.at("gpus_per_node").get<int>();
    c.gpu_mem_bytes = j.at("gpu_mem_bytes").get<std::int64_t>();
    c.xfer_gbps = j.value("xfer_gbps", c.xfer_gbps);
    c.coord_overhead_ms = j.value("coord_overhead_ms", c.coord_overhead_ms);
    c.validate();
    return c;
  });
}

inline ClusterSpec load_cluster(const std::string& path) {
  return cluster_from_json(detail::read_json_file(path));
}

inline json to_json(const JobConfig& job) {
  return {{"f", job.f}, {"global_batch", job.global_batch}, {"microbatch", job.microbatch}};
}

inline JobConfig job_from_json(const json& j) {
  return detail::parse_guard("job", [&] {
    JobConfig job;
    job.f = j.at("f").get<int>();
    job.global_batch = j.at("global_batch").get<std::int64_t>();
    job.microbatch = j.at("microbatch").get<std::int64_t>();
    job.validate();
    return job;
  });
}

inline JobConfig load_job(const std::string& path) {
  return job_from_json(detail::read_json_file(path));
}

// ---- templates -----------------------------------------------------------

inline json to_json(const NodeSpec& spec) {
  return {{"n0", spec.n0},
          {"f", spec.f},
          {"nodes", spec.total_nodes},
          {"p", spec.p()},
          {"sizes", spec.sizes},
          {"coverage_verified", spec.coverage_verified}};
}

inline json to_json(const PipelineTemplate& t) {
  json stages = json::array();
  for (const auto& s : t.stages) {
    stages.push_back({{"start", s.layer_start},
                      {"end", s.layer_end},
                      {"gpus", s.gpus},
                      {"node", s.node},
                      {"stage_ms", s.stage_ms}});
  }
  return {{"nodes", t.nodes},
          {"stages", stages},
          {"t1_ms", t.cost.t1_ms},
          {"t2_ms", t.cost.t2_ms},
          {"t3_ms", t.cost.t3_ms},
          {"kstar", t.cost.kstar},
          {"slowest_stage_ms", t.cost.slowest_stage_ms}};
}

inline json to_json(const TemplateSet& ts) {
  json templates = json::array();
  for (const auto& [n, t] : ts.templates) templates.push_back(to_json(t));
  return {{"node_spec", to_json(ts.spec)}, {"templates", templates}};
}

// Template file: the template set plus the profile and cluster it was built
// from, so downstream commands need only this one file.
inline json to_json(const PlanContext& ctx) {
  json j = to_json(ctx.templates);
  j["profile"] = to_json(ctx.profile);
  j["cluster"] = to_json(ctx.cluster);
  return j;
}

inline PlanContext plan_context_from_json(const json& j) {
  return detail::parse_guard("templates", [&] {
    LayerProfileSet profile = profile_from_json(j.at("profile"));
    ClusterSpec cluster = cluster_from_json(j.at("cluster"));
    const json& js = j.at("node_spec");
    TemplateSet ts;
    ts.spec = node_specs(js.at("nodes").get<int>(), js.at("f").get<int>(), js.at("n0").get<int>());
    if (js.at("sizes").get<std::vector<int>>() != ts.spec.sizes) {
      throw Error(ErrorCode::kParse, "templates: node_spec sizes are inconsistent");
    }
    for (const json& jt : j.at("templates")) {
      PipelineTemplate t;
      t.nodes = jt.at("nodes").get<int>();
      t.gpus_per_node = profile.gpus_per_node();
      int gpus_used = 0;
      int next_layer = 0;
      for (const json& st : jt.at("stages")) {
        StageSpec s;
        s.layer_start = st.at("start").get<int>();
        s.layer_end = st.at("end").get<int>();
        s.gpus = st.at("gpus").get<int>();
        s.node = gpus_used / profile.gpus_per_node();
        if (s.layer_start != next_layer || s.layer_end <= s.layer_start ||
            (gpus_used % profile.gpus_per_node()) + s.gpus > profile.gpus_per_node()) {
          throw Error(ErrorCode::kParse, "templates: malformed stage list");
        }
        s.stage_ms = stage_cost(profile, s.layer_start, s.layer_end, s.gpus).total_ms();
        gpus_used += s.gpus;
        next_layer = s.layer_end;
        t.stages.push_back(s);
      }
      if (next_layer != profile.num_layers() || gpus_used != t.nodes * profile.gpus_per_node()) {
        throw Error(ErrorCode::kParse, "templates: stages must cover all layers and GPUs");
      }
      t.cost.t1_ms = jt.at("t1_ms").get<double>();
      t.cost.t2_ms = jt.at("t2_ms").get<double>();
      t.cost.t3_ms = jt.at("t3_ms").get<double>();
      t.cost.kstar = jt.at("kstar").get<int>();
      const CostTriple check = evaluate_stages(t.stages);
      t.cost.slowest_stage_ms = jt.value("slowest_stage_ms", check.slowest_stage_ms);
      auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
      if (!close(t.cost.t1_ms, check.t1_ms) || !close(t.cost.t2_ms, check.t2_ms) ||
          !close(t.cost.t3_ms, check.t3_ms) || t.cost.kstar != check.kstar) {
        throw Error(ErrorCode::kParse, "templates: cost does not match the profile");
      }
      ts.templates.emplace(t.nodes, std::move(t));
    }
    for (int n : ts.spec.sizes) {
      if (!ts.contains(n)) {
        throw Error(ErrorCode::kParse, "templates: missing template for " + std::to_string(n));
      }
    }
    return PlanContext{std::move(profile), cluster, std::move(ts)};
  });
}

inline PlanContext load_plan_context(const std::string& path) {
  return plan_context_from_json(detail::read_json_file(path));
}

// ---- plans ---------------------------------------------------------------

inline json to_json(const BatchAssignment& b) {
  return {{"microbatches", b.microbatches},
          {"microbatch_ms", b.microbatch_ms},
          {"objective_ms2", b.objective}};
}

inline json to_json(const InstantiationPlan& plan) {
  json pipelines = json::array();
  for (std::size_t i = 0; i < plan.pipeline_nodes.size(); ++i) {
    pipelines.push_back({{"template_nodes", plan.pipeline_nodes[i]},
                         {"microbatches", plan.batch.microbatches[i]}});
  }
  return {{"counts", plan.set.counts},
          {"pipelines", pipelines},
          {"objective_ms2", plan.batch.objective},
          {"iteration_ms", plan.iteration_ms},
          {"throughput_sps", plan.throughput_sps}};
}

inline json to_json(const CandidatePlan& c) {
  if (c.plan) return to_json(*c.plan);
  json j = {{"counts", c.set.counts}, {"error", "infeasible_distribution"}};
  if (c.recommended_global_batch) j["recommended_global_batch"] = *c.recommended_global_batch;
  return j;
}

// ---- reconfiguration -----------------------------------------------------

inline json node_list(const std::vector<NodeId>& nodes) {
  json arr = json::array();
  for (NodeId n : nodes) arr.push_back(node_value(n));
  return arr;
}

inline json to_json(const ExecutionState& state) {
  json pipelines = json::array();
  for (std::size_t i = 0; i < state.pipelines.size(); ++i) {
    const auto& p = state.pipelines[i];
    pipelines.push_back({{"id", p.id},
                         {"template_nodes", p.template_nodes},
                         {"nodes", node_list(p.nodes)},
                         {"microbatches", state.batch.microbatches.at(i)}});
  }
  return {{"pipelines", pipelines}, {"alive_nodes", state.num_alive()}};
}

inline json to_json(const ReconfigAction& a) {
  return std::visit(
      [](const auto& act) -> json {
        using T = std::decay_t<decltype(act)>;
        if constexpr (std::is_same_v<T, action::Drop>) {
          return {{"action", "drop"}, {"pipeline", act.pipeline}};
        } else if constexpr (std::is_same_v<T, action::Reinstantiate>) {
          return {{"action", "reinstantiate"}, {"pipeline", act.pipeline}, {"nodes", act.nodes}};
        } else if constexpr (std::is_same_v<T, action::Borrow>) {
          return {{"action", "borrow"}, {"from", act.from}, {"to", act.to}, {"count", act.count}};
        } else if constexpr (std::is_same_v<T, action::Merge>) {
          return {{"action", "merge"}, {"into", act.into}, {"from", act.from}};
        } else {
          return {{"action", "replan"}, {"counts", act.counts}};
        }
      },
      a);
}

inline json to_json(const CopyPlan& plan) {
  json arr = json::array();
  for (const auto& t : plan.transfers) {
    arr.push_back({{"layer", t.layer},
                   {"donor", node_value(t.donor)},
                   {"receiver", node_value(t.receiver)},
                   {"bytes", t.bytes}});
  }
  return arr;
}

inline json to_json(const ReconfigOutcome& o) {
  json actions = json::array();
  for (const auto& a : o.actions) actions.push_back(to_json(a));
  return {{"outcome", detail::outcome_name(o.kind)},
          {"failed", node_list(o.failed)},
          {"joined", node_list(o.joined)},
          {"actions", actions},
          {"copy_plan", to_json(o.copy_plan)},
          {"copy_bytes", o.copy_plan.total_bytes()},
          {"downtime_ms", o.downtime_ms},
          {"new_state", to_json(o.new_state)}};
}

// ---- traces and reports --------------------------------------------------

inline TraceEvent trace_event_from_json(const json& j) {
  return detail::parse_guard("trace event", [&] {
    TraceEvent e;
    e.t_s = j.at("t_s").get<double>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fail") {
      e.kind = TraceEvent::Kind::kFail;
    } else if (kind == "join") {
      e.kind = TraceEvent::Kind::kJoin;
    } else {
      throw Error(ErrorCode::kParse, "unknown event kind '" + kind + "'");
    }
    if (j.contains("nodes")) {
      for (const auto& n : j.at("nodes")) e.nodes.push_back(NodeId(n.get<std::uint32_t>()));
      e.count = j.value("count", static_cast<int>(e.nodes.size()));
    } else {
      e.count = j.at("count").get<int>();
    }
    return e;
  });
}

// JSON lines; blank lines are skipped.
inline std::vector<TraceBatch> parse_trace(std::istream& in) {
  std::vector<TraceEvent> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
    events.push_back(trace_event_from_json(j));
  }
  return coalesce_trace(events);
}

inline std::vector<TraceBatch> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParse, "cannot open " + path);
  return parse_trace(in);
}

inline json to_json(const SimReport& r) {
  json series = json::array();
  for (const auto& p : r.series) {
    series.push_back({{"t_s", p.t_s}, {"throughput_sps", p.throughput_sps}, {"alive_nodes", p.alive_nodes}});
  }
  json events = json::array();
  for (const auto& e : r.events) {
    events.push_back({{"t_s", e.t_s},
                      {"kind", event_kind_name(e.kind)},
                      {"nodes_changed", e.nodes_changed},
                      {"outcome", e.outcome},
                      {"downtime_ms", e.downtime_ms},
                      {"copy_bytes", e.copy_bytes},
                      {"lost_iteration_fraction", e.lost_iteration_fraction},
                      {"alive_nodes", e.alive_nodes},
                      {"pipelines", e.pipelines},
                      {"batch_samples", e.batch_samples},
                      {"iteration_ms", e.iteration_ms}});
  }
  return {{"global_batch", r.global_batch},
          {"iterations", r.iterations},
          {"samples_trained", r.samples_trained},
          {"avg_throughput_sps", r.avg_throughput_sps},
          {"horizon_s", r.horizon_s},
          {"elapsed_s", r.elapsed_s},
          {"training_ms", r.training_ms},
          {"reconfiguration_ms", r.reconfiguration_ms},
          {"fallback_ms", r.fallback_ms},
          {"breakdown",
           {{"training", r.breakdown.training},
            {"reconfiguration", r.breakdown.reconfiguration},
            {"fallback", r.breakdown.fallback}}},
          {"exit", {{"kind", exit_kind_name(r.exit.kind)}, {"t_s", r.exit.t_s}}},
          {"series", series},
          {"events", events}};
}

inline std::string series_csv(const SimReport& r) {
  std::ostringstream out;
  out << "t_s,throughput_sps,alive_nodes\n";
  out << std::setprecision(17);
  for (const auto& p : r.series) out << p.t_s << ',' << p.throughput_sps << ',' << p.alive_nodes << '\n';
  return out.str();
}

inline json error_json(const Error& e) {
  json j = {{"error", error_code_name(e.code())}, {"message", e.what()}};
  if (e.recommended_global_batch()) j["recommended_global_batch"] = *e.recommended_global_batch();
  return j;
}

}  // namespace resilplan
