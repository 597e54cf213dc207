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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "resilplan/cost_model.hpp"
#include "resilplan/error.hpp"

namespace resilplan {

// How many nodes each pipeline template uses. Sizes are consecutive,
// starting at the smallest viable pipeline n0 and ending at the largest
// size that still leaves room for f other n0-node replicas.
struct NodeSpec {
  int n0 = 1;
  int f = 0;
  int total_nodes = 1;
  std::vector<int> sizes;
  bool coverage_verified = false;

  int p() const { return static_cast<int>(sizes.size()); }
  int min_size() const { return sizes.front(); }
  int max_size() const { return sizes.back(); }
  bool has_size(int n) const { return n >= min_size() && n <= max_size(); }
  int index_of(int n) const { return n - min_size(); }
  // Smallest node count that still holds f+1 replicas.
  int node_floor() const { return (f + 1) * n0; }

  bool operator==(const NodeSpec&) const = default;
};

namespace detail {

// Max number of parts summing to each total, -1 when unreachable.
inline std::vector<int> max_parts_table(const std::vector<int>& sizes, int limit) {
  std::vector<int> best(limit + 1, -1);
  best[0] = 0;
  for (int m = 1; m <= limit; ++m) {
    for (int s : sizes) {
      if (s <= m && best[m - s] >= 0) best[m] = std::max(best[m], best[m - s] + 1);
    }
  }
  return best;
}

}  // namespace detail

inline NodeSpec node_specs(int total_nodes, int f, int n0) {
  detail::require(f >= 0, ErrorCode::kInvalidArgument, "f must be >= 0");
  detail::require(n0 >= 1, ErrorCode::kInvalidArgument, "n0 must be >= 1");
  if (total_nodes < (f + 1) * n0) {
    throw Error(ErrorCode::kInsufficientReplicas, "cannot maintain f+1 replicas");
  }
  NodeSpec spec;
  spec.n0 = n0;
  spec.f = f;
  spec.total_nodes = total_nodes;
  for (int n = n0; n <= total_nodes - f * n0; ++n) spec.sizes.push_back(n);

  if (spec.p() > n0 - 1) {
    // Consecutive sizes with p > n0 - 1 have Frobenius number n0 - 1.
    spec.coverage_verified = true;
  } else {
    const auto best = detail::max_parts_table(spec.sizes, total_nodes);
    spec.coverage_verified = true;
    for (int m = spec.node_floor(); m <= total_nodes; ++m) {
      if (best[m] < f + 1) {
        spec.coverage_verified = false;
        break;
      }
    }
  }
  return spec;
}

// Devices handed to a sub-problem: a run of whole nodes, or part of one node.
// WholeNodes(1) is normalized to IntraNode(M) so both share memo entries.
struct DeviceAlloc {
  enum class Kind : std::uint8_t { kWholeNodes, kIntraNode };

  Kind kind = Kind::kIntraNode;
  int count = 1;

  static DeviceAlloc whole_nodes(int q, int gpus_per_node) {
    if (q == 1) return intra_node(gpus_per_node);
    return DeviceAlloc{Kind::kWholeNodes, q};
  }
  static DeviceAlloc intra_node(int r) { return DeviceAlloc{Kind::kIntraNode, r}; }

  int gpus(int gpus_per_node) const {
    return kind == Kind::kWholeNodes ? count * gpus_per_node : count;
  }
  // Fewest stages that can cover this allocation without crossing nodes.
  int min_stages() const { return kind == Kind::kWholeNodes ? count : 1; }

  bool operator==(const DeviceAlloc&) const = default;
};

struct StageSpec {
  int layer_start = 0;
  int layer_end = 0;
  int gpus = 1;
  int node = 0;  // index within the pipeline
  double stage_ms = 0.0;

  bool operator==(const StageSpec&) const = default;
};

struct CostTriple {
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  double t3_ms = 0.0;
  int kstar = 0;
  double slowest_stage_ms = 0.0;
  bool infeasible = false;

  static CostTriple unreachable() {
    CostTriple c;
    c.t1_ms = c.t2_ms = c.t3_ms = std::numeric_limits<double>::infinity();
    c.infeasible = true;
    return c;
  }

  double total_ms() const {
    return infeasible ? std::numeric_limits<double>::infinity() : t1_ms + t2_ms + t3_ms;
  }

  bool operator==(const CostTriple&) const = default;
};

// Number of microbatches assumed while shaping templates.
inline int planning_microbatches(int num_stages) { return 4 * num_stages; }

inline double steady_multiplier(int microbatches, int num_stages, int kstar) {
  return static_cast<double>(microbatches - num_stages + kstar - 1);
}

// Single-stage base case: T1 = F+B, T2 = 2(F+B), T3 = F+B.
inline CostTriple single_stage_cost(double stage_ms) {
  CostTriple c;
  c.t1_ms = stage_ms;
  c.t2_ms = 2.0 * stage_ms;
  c.t3_ms = stage_ms;
  c.kstar = 0;
  c.slowest_stage_ms = stage_ms;
  return c;
}

// Joins a `first_stages`-stage head with a tail into a pipeline of
// `num_stages` stages. The slowest stage is the one with the larger F+B;
// ties keep the head's (smaller index).
inline CostTriple combine_costs(const CostTriple& head, const CostTriple& tail,
                                int first_stages, int num_stages) {
  if (head.infeasible || tail.infeasible) return CostTriple::unreachable();
  CostTriple c;
  c.t1_ms = head.t1_ms + tail.t1_ms;
  if (head.slowest_stage_ms >= tail.slowest_stage_ms) {
    c.kstar = head.kstar;
    c.slowest_stage_ms = head.slowest_stage_ms;
    c.t3_ms = head.t3_ms + tail.t1_ms;
  } else {
    c.kstar = first_stages + tail.kstar;
    c.slowest_stage_ms = tail.slowest_stage_ms;
    c.t3_ms = tail.t3_ms;
  }
  c.t2_ms = steady_multiplier(planning_microbatches(num_stages), num_stages, c.kstar) *
            c.slowest_stage_ms;
  return c;
}

// Memo for the stage mapper, keyed on (stages, layer range, allocation).
// Tied to one profile. Not thread-safe: template generation is
// single-threaded.
class StageMemo {
 public:
  struct Entry {
    CostTriple cost;
    // Best split; first_stages == 0 marks a single-stage leaf.
    int first_stages = 0;
    int split_layer = 0;
    DeviceAlloc head_alloc;
    DeviceAlloc tail_alloc;
  };

  void bind(const LayerProfileSet& profile) {
    if (profile_ == nullptr) {
      profile_ = &profile;
    } else if (profile_ != &profile) {
      throw Error(ErrorCode::kInvalidArgument, "memo is bound to a different profile");
    }
  }

  const Entry* find(std::uint64_t key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  const Entry& insert(std::uint64_t key, Entry entry) {
    return entries_.emplace(key, entry).first->second;
  }
  std::size_t size() const { return entries_.size(); }

  static std::uint64_t key(int stages, int begin, int end, DeviceAlloc alloc) {
    return (static_cast<std::uint64_t>(stages) << 48) |
           (static_cast<std::uint64_t>(begin) << 32) |
           (static_cast<std::uint64_t>(end) << 16) |
           (static_cast<std::uint64_t>(alloc.kind == DeviceAlloc::Kind::kWholeNodes) << 15) |
           static_cast<std::uint64_t>(alloc.count);
  }

 private:
  const LayerProfileSet* profile_ = nullptr;
  std::unordered_map<std::uint64_t, Entry> entries_;
};

namespace detail {

// Enumerates the device splits of `alloc` in ascending size of the head.
template <typename Fn>
void for_each_device_split(DeviceAlloc alloc, int gpus_per_node, Fn&& fn) {
  if (alloc.kind == DeviceAlloc::Kind::kWholeNodes) {
    for (int j = 1; j < alloc.count; ++j) {
      fn(DeviceAlloc::whole_nodes(j, gpus_per_node),
         DeviceAlloc::whole_nodes(alloc.count - j, gpus_per_node));
    }
  } else {
    for (int m = 1; m < alloc.count; ++m) {
      fn(DeviceAlloc::intra_node(m), DeviceAlloc::intra_node(alloc.count - m));
    }
  }
}

inline bool stages_fit(int stages, int begin, int end, DeviceAlloc alloc, int gpus_per_node) {
  return stages >= alloc.min_stages() && stages <= alloc.gpus(gpus_per_node) &&
         stages <= end - begin;
}

class StageMapper {
 public:
  StageMapper(const LayerProfileSet& profile, StageMemo& memo)
      : profile_(profile), memo_(memo), gpus_per_node_(profile.gpus_per_node()) {
    memo_.bind(profile);
  }

  const StageMemo::Entry& solve(int stages, int begin, int end, DeviceAlloc alloc) {
    const std::uint64_t key = StageMemo::key(stages, begin, end, alloc);
    if (const auto* hit = memo_.find(key)) return *hit;

    StageMemo::Entry best;
    best.cost = CostTriple::unreachable();
    if (!stages_fit(stages, begin, end, alloc, gpus_per_node_)) {
      return memo_.insert(key, best);
    }
    if (stages == 1) {
      best.cost = single_stage_cost(
          stage_cost(profile_, begin, end, alloc.gpus(gpus_per_node_)).total_ms());
      return memo_.insert(key, best);
    }

    // Tie-break order: smaller split layer, then smaller head allocation,
    // then fewer head stages.
    double best_total = std::numeric_limits<double>::infinity();
    for (int k = begin + 1; k < end; ++k) {
      for_each_device_split(alloc, gpus_per_node_, [&](DeviceAlloc head, DeviceAlloc tail) {
        for (int s = 1; s < stages; ++s) {
          if (!stages_fit(s, begin, k, head, gpus_per_node_) ||
              !stages_fit(stages - s, k, end, tail, gpus_per_node_)) {
            continue;
          }
          const CostTriple head_cost = solve(s, begin, k, head).cost;
          if (head_cost.infeasible) continue;
          const CostTriple tail_cost = solve(stages - s, k, end, tail).cost;
          if (tail_cost.infeasible) continue;
          const CostTriple joined = combine_costs(head_cost, tail_cost, s, stages);
          if (joined.total_ms() < best_total) {
            best_total = joined.total_ms();
            best.cost = joined;
            best.first_stages = s;
            best.split_layer = k;
            best.head_alloc = head;
            best.tail_alloc = tail;
          }
        }
      });
    }
    return memo_.insert(key, best);
  }

  void collect(int stages, int begin, int end, DeviceAlloc alloc,
               std::vector<StageSpec>& out) {
    const StageMemo::Entry entry = solve(stages, begin, end, alloc);
    if (entry.first_stages == 0) {
      StageSpec stage;
      stage.layer_start = begin;
      stage.layer_end = end;
      stage.gpus = alloc.gpus(gpus_per_node_);
      stage.stage_ms = entry.cost.slowest_stage_ms;
      out.push_back(stage);
      return;
    }
    collect(entry.first_stages, begin, entry.split_layer, entry.head_alloc, out);
    collect(stages - entry.first_stages, entry.split_layer, end, entry.tail_alloc, out);
  }

 private:
  const LayerProfileSet& profile_;
  StageMemo& memo_;
  int gpus_per_node_;
};

// Stages fill nodes in order; each node's GPUs are used exactly once.
inline void assign_stage_nodes(std::vector<StageSpec>& stages, int gpus_per_node) {
  int used = 0;
  for (auto& stage : stages) {
    stage.node = used / gpus_per_node;
    used += stage.gpus;
  }
}

}  // namespace detail

struct StageMapping {
  std::vector<StageSpec> stages;
  CostTriple cost;
};

// Minimum-time mapping of the whole model onto `alloc` with exactly
// `num_stages` stages. Infeasible requests yield an infeasible cost.
inline StageMapping map_stages(const LayerProfileSet& profile, DeviceAlloc alloc,
                               int num_stages, StageMemo& memo) {
  detail::require(num_stages >= 1, ErrorCode::kInvalidArgument, "S must be >= 1");
  detail::require(alloc.count >= 1, ErrorCode::kInvalidArgument, "empty allocation");
  if (alloc.kind == DeviceAlloc::Kind::kWholeNodes && alloc.count == 1) {
    alloc = DeviceAlloc::intra_node(profile.gpus_per_node());
  }
  detail::require(alloc.kind == DeviceAlloc::Kind::kWholeNodes ||
                      alloc.count <= profile.gpus_per_node(),
                  ErrorCode::kInvalidArgument, "intra-node allocation exceeds M");
  detail::StageMapper mapper(profile, memo);
  StageMapping mapping;
  mapping.cost = mapper.solve(num_stages, 0, profile.num_layers(), alloc).cost;
  if (!mapping.cost.infeasible) {
    mapper.collect(num_stages, 0, profile.num_layers(), alloc, mapping.stages);
    detail::assign_stage_nodes(mapping.stages, profile.gpus_per_node());
  }
  return mapping;
}

inline StageMapping map_stages(const LayerProfileSet& profile, DeviceAlloc alloc,
                               int num_stages) {
  StageMemo memo;
  return map_stages(profile, alloc, num_stages, memo);
}

struct PipelineTemplate {
  int nodes = 1;
  int gpus_per_node = 1;
  std::vector<StageSpec> stages;
  CostTriple cost;

  int num_stages() const { return static_cast<int>(stages.size()); }

  // Estimated iteration time with `microbatches` microbatches. The
  // steady-phase count is clamped at zero for very short pipelines.
  double iteration_ms(int microbatches) const {
    const double steady =
        std::max(0.0, steady_multiplier(microbatches, num_stages(), cost.kstar));
    return cost.t1_ms + steady * cost.slowest_stage_ms + cost.t3_ms;
  }

  // Per-microbatch steady-state cost (F+B of the slowest stage).
  double microbatch_ms() const { return cost.slowest_stage_ms; }

  // Layer range [first, second) held by each node of the pipeline.
  std::vector<std::pair<int, int>> node_layer_ranges() const {
    std::vector<std::pair<int, int>> ranges(nodes, {-1, -1});
    for (const auto& stage : stages) {
      auto& r = ranges[stage.node];
      if (r.first < 0) r.first = stage.layer_start;
      r.second = stage.layer_end;
    }
    return ranges;
  }

  bool operator==(const PipelineTemplate&) const = default;
};

// Cost of an explicit partition, accumulated stage by stage.
inline CostTriple evaluate_stages(const std::vector<StageSpec>& stages) {
  CostTriple c;
  if (stages.empty()) return CostTriple::unreachable();
  c = single_stage_cost(stages.front().stage_ms);
  for (std::size_t i = 1; i < stages.size(); ++i) {
    c = combine_costs(c, single_stage_cost(stages[i].stage_ms), static_cast<int>(i),
                      static_cast<int>(i + 1));
  }
  return c;
}

inline PipelineTemplate generate_template(const LayerProfileSet& profile, int nodes,
                                          StageMemo& memo) {
  detail::require(nodes >= 1, ErrorCode::kInvalidArgument, "node count must be >= 1");
  if (profile.num_layers() < nodes) {
    throw Error(ErrorCode::kTooFewLayers, "too few layers for node count");
  }
  const int gpus_per_node = profile.gpus_per_node();
  const DeviceAlloc alloc = DeviceAlloc::whole_nodes(nodes, gpus_per_node);
  const int max_stages = std::min(profile.num_layers(), nodes * gpus_per_node);

  PipelineTemplate best;
  best.nodes = nodes;
  best.gpus_per_node = gpus_per_node;
  best.cost = CostTriple::unreachable();
  for (int s = nodes; s <= max_stages; ++s) {
    StageMapping mapping = map_stages(profile, alloc, s, memo);
    if (mapping.cost.total_ms() < best.cost.total_ms()) {
      best.stages = std::move(mapping.stages);
      best.cost = mapping.cost;
    }
  }
  if (best.cost.infeasible) {
    throw Error(ErrorCode::kTooFewLayers, "too few layers for node count");
  }
  return best;
}

inline PipelineTemplate generate_template(const LayerProfileSet& profile, int nodes) {
  StageMemo memo;
  return generate_template(profile, nodes, memo);
}

struct TemplateSet {
  NodeSpec spec;
  std::map<int, PipelineTemplate> templates;

  const PipelineTemplate& at(int nodes) const {
    auto it = templates.find(nodes);
    if (it == templates.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "no template with " + std::to_string(nodes) + " nodes");
    }
    return it->second;
  }
  bool contains(int nodes) const { return templates.count(nodes) != 0; }

  bool operator==(const TemplateSet&) const = default;
};

// Builds the largest template first so every smaller one reuses its memo.
inline TemplateSet generate_template_set(const LayerProfileSet& profile,
                                         const ClusterSpec& cluster, int f, int n0) {
  detail::require(cluster.gpus_per_node == profile.gpus_per_node(),
                  ErrorCode::kInvalidArgument,
                  "cluster and profile disagree on GPUs per node");
  TemplateSet set;
  set.spec = node_specs(cluster.nodes, f, n0);
  StageMemo memo;
  for (auto it = set.spec.sizes.rbegin(); it != set.spec.sizes.rend(); ++it) {
    set.templates.emplace(*it, generate_template(profile, *it, memo));
  }
  return set;
}

}  // namespace resilplan
