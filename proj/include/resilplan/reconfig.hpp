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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "resilplan/cost_model.hpp"
#include "resilplan/error.hpp"
#include "resilplan/instantiation.hpp"
#include "resilplan/template_gen.hpp"

namespace resilplan {

enum class NodeId : std::uint32_t {};

inline std::uint32_t node_value(NodeId id) { return static_cast<std::uint32_t>(id); }

// Everything the planner computed up front for one training job.
struct PlanContext {
  LayerProfileSet profile;
  ClusterSpec cluster;
  TemplateSet templates;

  const NodeSpec& spec() const { return templates.spec; }
  int num_layers() const { return profile.num_layers(); }
};

inline PlanContext build_plan_context(LayerProfileSet profile, ClusterSpec cluster, int f,
                                      int n0) {
  cluster.validate();
  TemplateSet ts = generate_template_set(profile, cluster, f, n0);
  return PlanContext{std::move(profile), cluster, std::move(ts)};
}

struct Pipeline {
  std::uint64_t id = 0;
  int template_nodes = 0;
  std::vector<NodeId> nodes;  // position i runs the template's node i

  bool operator==(const Pipeline&) const = default;
};

struct ExecutionState {
  std::vector<Pipeline> pipelines;
  JobConfig job;
  BatchAssignment batch;
  std::uint64_t next_pipeline_id = 0;

  std::vector<NodeId> alive_nodes() const {
    std::vector<NodeId> out;
    for (const auto& p : pipelines) out.insert(out.end(), p.nodes.begin(), p.nodes.end());
    std::sort(out.begin(), out.end());
    return out;
  }
  int num_alive() const {
    int n = 0;
    for (const auto& p : pipelines) n += static_cast<int>(p.nodes.size());
    return n;
  }
  std::vector<int> pipeline_nodes() const {
    std::vector<int> out;
    for (const auto& p : pipelines) out.push_back(p.template_nodes);
    return out;
  }

  bool operator==(const ExecutionState&) const = default;
};

// Layer range [first, second) held by every alive node.
inline std::map<NodeId, std::pair<int, int>> layer_ownership(const PlanContext& ctx,
                                                             const ExecutionState& state) {
  std::map<NodeId, std::pair<int, int>> owned;
  for (const auto& p : state.pipelines) {
    const auto ranges = ctx.templates.at(p.template_nodes).node_layer_ranges();
    for (std::size_t i = 0; i < p.nodes.size(); ++i) owned[p.nodes[i]] = ranges[i];
  }
  return owned;
}

inline double iteration_ms(const PlanContext& ctx, const ExecutionState& state) {
  return plan_iteration_ms(ctx.templates, state.pipeline_nodes(), state.batch.microbatches);
}

// Returns a description of every broken state invariant; empty means sound.
inline std::vector<std::string> invariant_violations(const PlanContext& ctx,
                                                     const ExecutionState& state) {
  std::vector<std::string> out;
  if (static_cast<int>(state.pipelines.size()) < state.job.f + 1) {
    out.push_back("fewer than f+1 pipelines");
  }
  std::set<NodeId> seen;
  for (const auto& p : state.pipelines) {
    if (!ctx.templates.contains(p.template_nodes)) {
      out.push_back("pipeline " + std::to_string(p.id) + " has no template");
      continue;
    }
    if (static_cast<int>(p.nodes.size()) != p.template_nodes) {
      out.push_back("pipeline " + std::to_string(p.id) + " node count mismatch");
    }
    for (NodeId n : p.nodes) {
      if (!seen.insert(n).second) {
        out.push_back("node " + std::to_string(node_value(n)) + " in two pipelines");
      }
    }
    const auto& stages = ctx.templates.at(p.template_nodes).stages;
    int next = 0;
    for (const auto& s : stages) {
      if (s.layer_start != next) out.push_back("pipeline does not hold a full replica");
      next = s.layer_end;
    }
    if (next != ctx.num_layers()) out.push_back("pipeline does not hold a full replica");
  }
  if (state.batch.microbatches.size() != state.pipelines.size()) {
    out.push_back("batch assignment does not match pipelines");
  } else {
    std::int64_t total = 0;
    for (int n : state.batch.microbatches) {
      if (n < 1) out.push_back("pipeline with no microbatches");
      total += n;
    }
    if (total * state.job.microbatch != state.job.global_batch) {
      out.push_back("global batch not conserved");
    }
  }
  return out;
}

struct LayerTransfer {
  int layer = 0;
  NodeId donor{};
  NodeId receiver{};
  std::int64_t bytes = 0;

  bool operator==(const LayerTransfer&) const = default;
};

struct CopyPlan {
  std::vector<LayerTransfer> transfers;

  std::int64_t total_bytes() const {
    std::int64_t sum = 0;
    for (const auto& t : transfers) sum += t.bytes;
    return sum;
  }
  bool operator==(const CopyPlan&) const = default;
};

// Layers each node of `next` needs but did not hold in `prev`. Donors are
// nodes alive in `next` that held the layer in `prev`; the least-loaded
// donor (then lowest id) is chosen.
inline CopyPlan layer_copy_plan(const PlanContext& ctx, const ExecutionState& prev,
                                const ExecutionState& next) {
  const auto before = layer_ownership(ctx, prev);
  const auto after = layer_ownership(ctx, next);

  std::vector<std::vector<NodeId>> owners(ctx.num_layers());
  for (const auto& [node, range] : before) {
    if (after.count(node) == 0) continue;
    for (int l = range.first; l < range.second; ++l) owners[l].push_back(node);
  }

  CopyPlan plan;
  std::map<NodeId, int> outgoing;
  for (const auto& p : next.pipelines) {
    const auto ranges = ctx.templates.at(p.template_nodes).node_layer_ranges();
    for (std::size_t i = 0; i < p.nodes.size(); ++i) {
      const NodeId receiver = p.nodes[i];
      auto held = before.find(receiver);
      for (int l = ranges[i].first; l < ranges[i].second; ++l) {
        if (held != before.end() && l >= held->second.first && l < held->second.second) {
          continue;
        }
        if (owners[l].empty()) {
          throw Error(ErrorCode::kUnrecoverable,
                      "no surviving copy of layer " + std::to_string(l));
        }
        NodeId donor = owners[l].front();
        for (NodeId candidate : owners[l]) {
          if (outgoing[candidate] < outgoing[donor]) donor = candidate;
        }
        ++outgoing[donor];
        plan.transfers.push_back(
            LayerTransfer{l, donor, receiver, ctx.profile.layer(l).state_bytes});
      }
    }
  }
  return plan;
}

// Modeled recovery time: fixed coordination cost plus the slowest receiving
// pipeline's inbound copy at the cluster's transfer bandwidth.
inline double reconfiguration_downtime_ms(const PlanContext& ctx, const ExecutionState& next,
                                          const CopyPlan& plan) {
  std::map<NodeId, std::size_t> pipeline_of;
  for (std::size_t i = 0; i < next.pipelines.size(); ++i) {
    for (NodeId n : next.pipelines[i].nodes) pipeline_of[n] = i;
  }
  std::vector<std::int64_t> inbound(next.pipelines.size(), 0);
  for (const auto& t : plan.transfers) inbound[pipeline_of.at(t.receiver)] += t.bytes;
  std::int64_t worst = 0;
  for (auto b : inbound) worst = std::max(worst, b);
  const double copy_ms = static_cast<double>(worst) * 8.0 / (ctx.cluster.xfer_gbps * 1e9) * 1e3;
  return ctx.cluster.coord_overhead_ms + copy_ms;
}

struct SyncMember {
  int pipeline = 0;
  int stage = 0;
  std::vector<NodeId> nodes;

  bool operator==(const SyncMember&) const = default;
};

// Allreduce peer set of every layer: the stage holding it in each pipeline.
inline std::vector<std::vector<SyncMember>> sync_groups(const PlanContext& ctx,
                                                        const ExecutionState& state) {
  std::vector<std::vector<SyncMember>> groups(ctx.num_layers());
  for (std::size_t pi = 0; pi < state.pipelines.size(); ++pi) {
    const auto& p = state.pipelines[pi];
    const auto& stages = ctx.templates.at(p.template_nodes).stages;
    for (std::size_t si = 0; si < stages.size(); ++si) {
      const auto& s = stages[si];
      for (int l = s.layer_start; l < s.layer_end; ++l) {
        groups[l].push_back(SyncMember{static_cast<int>(pi), static_cast<int>(si),
                                       {p.nodes[s.node]}});
      }
    }
  }
  return groups;
}

// Places `pool` onto fresh pipelines of the given template sizes. Old
// pipelines that survive intact and match a size are kept verbatim; other
// positions go to the node whose previously held layers overlap most
// (by bytes) with what the position needs.
inline std::vector<Pipeline> assign_nodes(const PlanContext& ctx, const ExecutionState& prev,
                                          const std::vector<NodeId>& pool,
                                          const std::vector<int>& pipeline_nodes,
                                          std::uint64_t& next_id) {
  std::set<NodeId> free(pool.begin(), pool.end());
  std::vector<std::optional<Pipeline>> slots(pipeline_nodes.size());

  for (const auto& old : prev.pipelines) {
    const bool intact = std::all_of(old.nodes.begin(), old.nodes.end(),
                                    [&](NodeId n) { return free.count(n) != 0; });
    if (!intact) continue;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (!slots[s] && pipeline_nodes[s] == old.template_nodes) {
        slots[s] = old;
        for (NodeId n : old.nodes) free.erase(n);
        break;
      }
    }
  }

  const auto before = layer_ownership(ctx, prev);
  struct Position {
    std::size_t slot;
    int index;
    std::pair<int, int> range;
  };
  std::vector<Position> positions;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s]) continue;
    const auto ranges = ctx.templates.at(pipeline_nodes[s]).node_layer_ranges();
    for (int i = 0; i < pipeline_nodes[s]; ++i) positions.push_back({s, i, ranges[i]});
    Pipeline fresh;
    fresh.id = next_id++;
    fresh.template_nodes = pipeline_nodes[s];
    fresh.nodes.assign(pipeline_nodes[s], NodeId{});
    slots[s] = std::move(fresh);
  }

  // (overlap bytes, position, node), best first.
  std::vector<std::tuple<std::int64_t, std::size_t, NodeId>> pairs;
  for (std::size_t pos = 0; pos < positions.size(); ++pos) {
    for (NodeId n : free) {
      auto held = before.find(n);
      if (held == before.end()) continue;
      const int lo = std::max(held->second.first, positions[pos].range.first);
      const int hi = std::min(held->second.second, positions[pos].range.second);
      if (lo >= hi) continue;
      pairs.emplace_back(ctx.profile.state_bytes(lo, hi), pos, n);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> filled(positions.size(), false);
  for (const auto& [bytes, pos, n] : pairs) {
    if (filled[pos] || free.count(n) == 0) continue;
    slots[positions[pos].slot]->nodes[positions[pos].index] = n;
    filled[pos] = true;
    free.erase(n);
  }
  for (std::size_t pos = 0; pos < positions.size(); ++pos) {
    if (filled[pos]) continue;
    detail::require(!free.empty(), ErrorCode::kInvalidArgument,
                    "node pool smaller than the plan");
    slots[positions[pos].slot]->nodes[positions[pos].index] = *free.begin();
    free.erase(free.begin());
  }
  detail::require(free.empty(), ErrorCode::kInvalidArgument, "node pool larger than the plan");

  std::vector<Pipeline> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline ExecutionState initial_state(const PlanContext& ctx, const JobConfig& job,
                                    const std::vector<NodeId>& nodes) {
  const InstantiationPlan plan =
      select_plan(ctx.templates, static_cast<int>(nodes.size()), job);
  ExecutionState state;
  state.job = job;
  std::size_t at = 0;
  for (int n : plan.pipeline_nodes) {
    Pipeline p;
    p.id = state.next_pipeline_id++;
    p.template_nodes = n;
    p.nodes.assign(nodes.begin() + at, nodes.begin() + at + n);
    at += n;
    state.pipelines.push_back(std::move(p));
  }
  state.batch = plan.batch;
  return state;
}

namespace action {

struct Drop {
  std::uint64_t pipeline = 0;
  bool operator==(const Drop&) const = default;
};
struct Reinstantiate {
  std::uint64_t pipeline = 0;
  int nodes = 0;
  bool operator==(const Reinstantiate&) const = default;
};
// Moves the last `count` nodes of `from` to the end of `to`.
struct Borrow {
  std::uint64_t from = 0;
  std::uint64_t to = 0;
  int count = 0;
  bool operator==(const Borrow&) const = default;
};
// Appends `from`'s nodes to `into` and removes `from`.
struct Merge {
  std::uint64_t into = 0;
  std::uint64_t from = 0;
  bool operator==(const Merge&) const = default;
};
// Discards all pipelines and instantiates `counts` over every alive node.
struct Replan {
  std::vector<int> counts;
  bool operator==(const Replan&) const = default;
};

}  // namespace action

using ReconfigAction =
    std::variant<action::Drop, action::Reinstantiate, action::Borrow, action::Merge,
                 action::Replan>;

struct MergeResult {
  enum class Kind { kMerged, kUndersized, kExceedsTemplates };
  Kind kind = Kind::kMerged;
  Pipeline pipeline;
};

// Concatenates b onto a. The result carries a template only when its size
// is within the template range.
inline MergeResult merge_pipelines(const Pipeline& a, const Pipeline& b, const TemplateSet& ts) {
  MergeResult out;
  out.pipeline.id = a.id;
  out.pipeline.nodes = a.nodes;
  out.pipeline.nodes.insert(out.pipeline.nodes.end(), b.nodes.begin(), b.nodes.end());
  const int size = static_cast<int>(out.pipeline.nodes.size());
  if (size < ts.spec.min_size()) {
    out.kind = MergeResult::Kind::kUndersized;
  } else if (size > ts.spec.max_size()) {
    out.kind = MergeResult::Kind::kExceedsTemplates;
  } else {
    out.pipeline.template_nodes = size;
  }
  return out;
}

namespace detail {

// Pipelines under repair. Primitive moves shared by the decision logic and
// the action replayer.
class WorkingSet {
 public:
  WorkingSet(const PlanContext& ctx, const ExecutionState& prev)
      : ctx_(ctx), prev_(prev), groups_(prev.pipelines), next_id_(prev.next_pipeline_id) {}

  void remove_nodes(const std::set<NodeId>& gone) {
    for (auto& g : groups_) {
      std::erase_if(g.nodes, [&](NodeId n) { return gone.count(n) != 0; });
    }
  }
  void add_to_pool(const std::vector<NodeId>& nodes) {
    extra_.insert(extra_.end(), nodes.begin(), nodes.end());
  }

  std::vector<Pipeline>& groups() { return groups_; }
  Pipeline& get(std::uint64_t id) { return groups_[position(id)]; }
  bool has(std::uint64_t id) const {
    return std::any_of(groups_.begin(), groups_.end(),
                       [&](const Pipeline& p) { return p.id == id; });
  }
  std::size_t position(std::uint64_t id) const {
    for (std::size_t i = 0; i < groups_.size(); ++i) {
      if (groups_[i].id == id) return i;
    }
    throw Error(ErrorCode::kInvalidArgument, "unknown pipeline " + std::to_string(id));
  }
  int size(std::uint64_t id) const {
    return static_cast<int>(groups_[position(id)].nodes.size());
  }

  void apply(const ReconfigAction& a) {
    std::visit([this](const auto& act) { do_apply(act); }, a);
  }

  ExecutionState finish(const JobConfig& job) const {
    ExecutionState out;
    out.pipelines = groups_;
    out.job = job;
    out.next_pipeline_id = next_id_;
    std::vector<double> times;
    for (const auto& p : out.pipelines) {
      times.push_back(ctx_.templates.at(p.template_nodes).microbatch_ms());
    }
    out.batch = distribute_batch(times, job.global_batch, job.microbatch);
    return out;
  }

 private:
  void do_apply(const action::Drop& a) {
    groups_.erase(groups_.begin() + static_cast<std::ptrdiff_t>(position(a.pipeline)));
  }
  void do_apply(const action::Reinstantiate& a) {
    Pipeline& p = get(a.pipeline);
    detail::require(static_cast<int>(p.nodes.size()) == a.nodes && ctx_.templates.contains(a.nodes),
                    ErrorCode::kInvalidArgument, "reinstantiation size mismatch");
    p.template_nodes = a.nodes;
  }
  void do_apply(const action::Borrow& a) {
    Pipeline& from = get(a.from);
    detail::require(static_cast<int>(from.nodes.size()) >= a.count, ErrorCode::kInvalidArgument,
                    "donor too small");
    // Same as `count` single-node borrows: tail nodes move last-first.
    std::vector<NodeId> moved(from.nodes.rbegin(), from.nodes.rbegin() + a.count);
    from.nodes.resize(from.nodes.size() - a.count);
    Pipeline& to = get(a.to);
    to.nodes.insert(to.nodes.end(), moved.begin(), moved.end());
  }
  void do_apply(const action::Merge& a) {
    Pipeline& into = get(a.into);
    const Pipeline from = get(a.from);
    into.nodes.insert(into.nodes.end(), from.nodes.begin(), from.nodes.end());
    groups_.erase(groups_.begin() + static_cast<std::ptrdiff_t>(position(a.from)));
  }
  void do_apply(const action::Replan& a) {
    std::vector<NodeId> pool = extra_;
    for (const auto& g : groups_) pool.insert(pool.end(), g.nodes.begin(), g.nodes.end());
    std::sort(pool.begin(), pool.end());
    groups_ = assign_nodes(ctx_, prev_, pool, expand_pipelines(ctx_.spec(), FeasibleSet{a.counts}),
                           next_id_);
    extra_.clear();
  }

  const PlanContext& ctx_;
  const ExecutionState& prev_;
  std::vector<Pipeline> groups_;
  std::vector<NodeId> extra_;
  std::uint64_t next_id_;
};

}  // namespace detail

struct ReconfigOutcome {
  enum class Kind {
    kNoop,            // nothing changed
    kReconfigured,    // training continues on new_state
    kCheckpointExit,  // too few nodes for f+1 replicas
    kUnrecoverable,   // some layer lost every copy
  };

  Kind kind = Kind::kNoop;
  ExecutionState new_state;
  CopyPlan copy_plan;
  double downtime_ms = 0.0;
  std::vector<ReconfigAction> actions;
  std::vector<NodeId> failed;
  std::vector<NodeId> joined;

  bool continues() const { return kind == Kind::kNoop || kind == Kind::kReconfigured; }
};

// Re-derives the post-reconfiguration state from the audit trail alone.
inline ExecutionState replay_actions(const PlanContext& ctx, const ExecutionState& prev,
                                     const std::vector<NodeId>& failed,
                                     const std::vector<NodeId>& joined,
                                     const std::vector<ReconfigAction>& actions) {
  detail::WorkingSet ws(ctx, prev);
  ws.remove_nodes(std::set<NodeId>(failed.begin(), failed.end()));
  ws.add_to_pool(joined);
  for (const auto& a : actions) ws.apply(a);
  return ws.finish(prev.job);
}

namespace detail {

inline ReconfigOutcome finish_outcome(const PlanContext& ctx, const ExecutionState& prev,
                                      ReconfigOutcome out, const ExecutionState& next) {
  out.kind = ReconfigOutcome::Kind::kReconfigured;
  out.new_state = next;
  out.copy_plan = layer_copy_plan(ctx, prev, next);
  out.downtime_ms = reconfiguration_downtime_ms(ctx, next, out.copy_plan);
  return out;
}

inline bool every_layer_survives(const PlanContext& ctx, const ExecutionState& state,
                                 const std::set<NodeId>& gone) {
  std::vector<bool> held(ctx.num_layers(), false);
  for (const auto& [node, range] : layer_ownership(ctx, state)) {
    if (gone.count(node) != 0) continue;
    for (int l = range.first; l < range.second; ++l) held[l] = true;
  }
  return std::all_of(held.begin(), held.end(), [](bool h) { return h; });
}

}  // namespace detail

// Repairs the pipelines hit by `failed`. Each broken pipeline, smallest
// survivor first, is reinstantiated at its new size if a template exists;
// otherwise it borrows nodes from the largest pipelines that can spare them;
// otherwise it merges with the smallest other pipeline until it is big
// enough. Falls back to a full replan when a merge overshoots the largest
// template or the replica floor would break.
inline ReconfigOutcome apply_failures(const PlanContext& ctx, const ExecutionState& state,
                                      const std::vector<NodeId>& failed) {
  const NodeSpec& spec = ctx.spec();
  const auto alive = state.alive_nodes();
  const std::set<NodeId> gone(failed.begin(), failed.end());
  detail::require(gone.size() == failed.size(), ErrorCode::kDuplicateNode,
                  "node listed twice in one failure batch");
  for (NodeId n : failed) {
    if (!std::binary_search(alive.begin(), alive.end(), n)) {
      throw Error(ErrorCode::kUnknownNode,
                  "failed node " + std::to_string(node_value(n)) + " is not alive");
    }
  }

  ReconfigOutcome out;
  out.failed = failed;
  if (failed.empty()) {
    out.new_state = state;
    return out;
  }
  const int survivors = static_cast<int>(alive.size() - failed.size());
  if (survivors < (state.job.f + 1) * spec.n0) {
    out.kind = ReconfigOutcome::Kind::kCheckpointExit;
    out.new_state = state;
    return out;
  }
  if (!detail::every_layer_survives(ctx, state, gone)) {
    out.kind = ReconfigOutcome::Kind::kUnrecoverable;
    out.new_state = state;
    return out;
  }

  detail::WorkingSet ws(ctx, state);
  ws.remove_nodes(gone);
  auto record = [&](ReconfigAction a) {
    ws.apply(a);
    out.actions.push_back(std::move(a));
  };

  std::vector<std::uint64_t> pending;
  for (const auto& p : state.pipelines) {
    const bool hit = std::any_of(p.nodes.begin(), p.nodes.end(),
                                 [&](NodeId n) { return gone.count(n) != 0; });
    if (!hit) continue;
    if (ws.size(p.id) == 0) {
      record(action::Drop{p.id});
    } else {
      pending.push_back(p.id);
    }
  }
  std::stable_sort(pending.begin(), pending.end(), [&](std::uint64_t a, std::uint64_t b) {
    return ws.size(a) < ws.size(b);
  });

  bool replan = false;
  for (std::size_t qi = 0; qi < pending.size() && !replan; ++qi) {
    const std::uint64_t id = pending[qi];
    if (!ws.has(id)) continue;
    const int size = ws.size(id);
    if (spec.has_size(size)) {
      record(action::Reinstantiate{id, size});
      continue;
    }

    const int need = spec.n0 - size;
    int spare = 0;
    for (const auto& g : ws.groups()) {
      if (g.id != id) spare += std::max(0, static_cast<int>(g.nodes.size()) - spec.n0);
    }
    if (spare >= need) {
      std::vector<std::uint64_t> donors;
      while (ws.size(id) < spec.n0) {
        const Pipeline* donor = nullptr;
        for (const auto& g : ws.groups()) {
          if (g.id == id || static_cast<int>(g.nodes.size()) <= spec.n0) continue;
          if (donor == nullptr || g.nodes.size() > donor->nodes.size()) donor = &g;
        }
        const std::uint64_t from = donor->id;
        if (!out.actions.empty()) {
          if (auto* last = std::get_if<action::Borrow>(&out.actions.back());
              last != nullptr && last->from == from && last->to == id) {
            ws.apply(action::Borrow{from, id, 1});
            ++last->count;
            continue;
          }
        }
        record(action::Borrow{from, id, 1});
        if (std::find(donors.begin(), donors.end(), from) == donors.end()) donors.push_back(from);
      }
      record(action::Reinstantiate{id, spec.n0});
      for (std::uint64_t d : donors) {
        const bool queued = std::find(pending.begin() + qi + 1, pending.end(), d) != pending.end();
        if (!queued) record(action::Reinstantiate{d, ws.size(d)});
      }
      continue;
    }

    for (;;) {
      const Pipeline* partner = nullptr;
      for (const auto& g : ws.groups()) {
        if (g.id == id) continue;
        if (partner == nullptr || g.nodes.size() < partner->nodes.size()) partner = &g;
      }
      if (partner == nullptr) {
        replan = true;
        break;
      }
      const MergeResult merged = merge_pipelines(ws.get(id), *partner, ctx.templates);
      const std::uint64_t from = partner->id;
      if (merged.kind == MergeResult::Kind::kExceedsTemplates) {
        replan = true;
        break;
      }
      record(action::Merge{id, from});
      if (merged.kind == MergeResult::Kind::kMerged) {
        record(action::Reinstantiate{id, merged.pipeline.template_nodes});
        break;
      }
    }
  }
  if (!replan && static_cast<int>(ws.groups().size()) < state.job.f + 1) replan = true;

  if (replan) {
    out.actions.clear();
    // Survivors can exceed N after joins; with p <= n0 - 1 such counts may
    // have no covering plan, which leaves only the checkpoint path.
    std::optional<InstantiationPlan> chosen;
    try {
      chosen = select_plan(ctx.templates, survivors, state.job);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoFeasiblePlan &&
          e.code() != ErrorCode::kInfeasibleDistribution) {
        throw;
      }
      out.kind = ReconfigOutcome::Kind::kCheckpointExit;
      out.new_state = state;
      return out;
    }
    const InstantiationPlan& plan = *chosen;
    const ExecutionState next =
        replay_actions(ctx, state, failed, {}, {action::Replan{plan.set.counts}});
    out.actions.push_back(action::Replan{plan.set.counts});
    return detail::finish_outcome(ctx, state, std::move(out), next);
  }
  return detail::finish_outcome(ctx, state, std::move(out), ws.finish(state.job));
}

// Adds nodes and re-selects the best plan over the enlarged cluster, keeping
// as many nodes on the layers they already hold as possible.
inline ReconfigOutcome apply_join(const PlanContext& ctx, const ExecutionState& state,
                                  const std::vector<NodeId>& joined) {
  const auto alive = state.alive_nodes();
  const std::set<NodeId> fresh(joined.begin(), joined.end());
  detail::require(fresh.size() == joined.size(), ErrorCode::kDuplicateNode,
                  "node listed twice in one join batch");
  for (NodeId n : joined) {
    if (std::binary_search(alive.begin(), alive.end(), n)) {
      throw Error(ErrorCode::kDuplicateNode,
                  "joining node " + std::to_string(node_value(n)) + " is already alive");
    }
  }
  ReconfigOutcome out;
  out.joined = joined;
  if (joined.empty()) {
    out.new_state = state;
    return out;
  }
  const int total = static_cast<int>(alive.size() + joined.size());
  const InstantiationPlan plan = select_plan(ctx.templates, total, state.job);
  out.actions.push_back(action::Replan{plan.set.counts});
  const ExecutionState next = replay_actions(ctx, state, {}, joined, out.actions);
  return detail::finish_outcome(ctx, state, std::move(out), next);
}

}  // namespace resilplan
