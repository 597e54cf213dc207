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
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "resilplan/error.hpp"
#include "resilplan/instantiation.hpp"
#include "resilplan/reconfig.hpp"

namespace resilplan {

struct TraceEvent {
  enum class Kind { kFail, kJoin };

  double t_s = 0.0;
  Kind kind = Kind::kFail;
  int count = 1;
  std::vector<NodeId> nodes;  // explicit ids; when empty, `count` picks them

  bool operator==(const TraceEvent&) const = default;
};

inline const char* event_kind_name(TraceEvent::Kind kind) {
  return kind == TraceEvent::Kind::kFail ? "fail" : "join";
}

// Events sharing a timestamp land together.
struct TraceBatch {
  double t_s = 0.0;
  std::vector<TraceEvent> events;

  bool operator==(const TraceBatch&) const = default;
};

inline std::vector<TraceBatch> coalesce_trace(const std::vector<TraceEvent>& events) {
  std::vector<TraceBatch> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const TraceEvent& e = events[i];
    if (!std::isfinite(e.t_s) || e.t_s < 0.0) {
      throw Error(ErrorCode::kParse, "event " + std::to_string(i) + ": negative timestamp");
    }
    if (!out.empty() && e.t_s < out.back().t_s) {
      throw Error(ErrorCode::kParse, "event " + std::to_string(i) + ": decreasing time");
    }
    if (e.count < 1) {
      throw Error(ErrorCode::kParse, "event " + std::to_string(i) + ": count must be >= 1");
    }
    if (!e.nodes.empty() && static_cast<int>(e.nodes.size()) != e.count) {
      throw Error(ErrorCode::kParse, "event " + std::to_string(i) + ": count disagrees with nodes");
    }
    if (out.empty() || out.back().t_s != e.t_s) out.push_back(TraceBatch{e.t_s, {}});
    out.back().events.push_back(e);
  }
  return out;
}

struct SimConfig {
  JobConfig job;
  double horizon_s = 3600.0;
  std::uint64_t seed = 0;
};

struct SeriesPoint {
  double t_s = 0.0;
  double throughput_sps = 0.0;
  int alive_nodes = 0;

  bool operator==(const SeriesPoint&) const = default;
};

struct SimEventRecord {
  double t_s = 0.0;
  TraceEvent::Kind kind = TraceEvent::Kind::kFail;
  int nodes_changed = 0;
  std::string outcome;
  double downtime_ms = 0.0;
  std::int64_t copy_bytes = 0;
  double lost_iteration_fraction = 0.0;
  int alive_nodes = 0;
  int pipelines = 0;
  std::int64_t batch_samples = 0;  // samples per iteration after the event
  double iteration_ms = 0.0;

  bool operator==(const SimEventRecord&) const = default;
};

struct TimeBreakdown {
  double training = 1.0;
  double reconfiguration = 0.0;
  double fallback = 0.0;

  bool operator==(const TimeBreakdown&) const = default;
};

struct SimExit {
  enum class Kind { kCompleted, kCheckpointExit, kUnrecoverable };
  Kind kind = Kind::kCompleted;
  double t_s = 0.0;

  bool operator==(const SimExit&) const = default;
};

inline const char* exit_kind_name(SimExit::Kind kind) {
  switch (kind) {
    case SimExit::Kind::kCompleted: return "completed";
    case SimExit::Kind::kCheckpointExit: return "checkpoint_exit";
    case SimExit::Kind::kUnrecoverable: return "unrecoverable";
  }
  return "unknown";
}

struct SimReport {
  std::int64_t global_batch = 0;
  std::int64_t iterations = 0;
  std::int64_t samples_trained = 0;
  double avg_throughput_sps = 0.0;
  double horizon_s = 0.0;
  double elapsed_s = 0.0;
  double training_ms = 0.0;
  double reconfiguration_ms = 0.0;
  double fallback_ms = 0.0;
  TimeBreakdown breakdown;
  std::vector<SeriesPoint> series;
  std::vector<SimEventRecord> events;
  SimExit exit;

  bool operator==(const SimReport&) const = default;
};

inline double nofail_baseline(const PlanContext& ctx, const JobConfig& job) {
  return select_plan(ctx.templates, ctx.cluster.nodes, job).throughput_sps;
}

namespace detail {

// Uniform sample without replacement; identical across platforms for a seed.
inline std::vector<NodeId> pick_victims(std::vector<NodeId> candidates, int count,
                                        std::mt19937_64& rng) {
  count = std::min<int>(count, static_cast<int>(candidates.size()));
  for (int i = 0; i < count; ++i) {
    const auto remaining = static_cast<std::uint64_t>(candidates.size() - i);
    const auto j = i + static_cast<std::size_t>(rng() % remaining);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

class SimClock {
 public:
  explicit SimClock(double horizon_ms) : horizon_ms_(horizon_ms) {}

  double now() const { return now_; }
  bool done() const { return now_ >= horizon_ms_; }

  // Trains full iterations until `until`; the unfinished remainder is
  // either discarded (an event cut it) or kept as training (horizon).
  double train_until(double until, double iter_ms, bool discard_partial, SimReport& r) {
    if (until <= now_) return 0.0;
    const auto full = static_cast<std::int64_t>(std::floor((until - now_) / iter_ms));
    r.iterations += full;
    r.samples_trained += full * r.global_batch;
    r.training_ms += static_cast<double>(full) * iter_ms;
    const double partial = std::max(0.0, until - (now_ + static_cast<double>(full) * iter_ms));
    if (discard_partial) {
      r.fallback_ms += partial;
    } else {
      r.training_ms += partial;
    }
    now_ = until;
    return partial;
  }

  double pause(double ms, SimReport& r) {
    const double spent = std::min(ms, horizon_ms_ - now_);
    r.reconfiguration_ms += spent;
    now_ += spent;
    return spent;
  }

 private:
  double horizon_ms_;
  double now_ = 0.0;
};

inline void push_point(SimReport& r, SeriesPoint p) {
  if (!r.series.empty() && r.series.back().t_s == p.t_s) {
    r.series.back() = p;
  } else {
    r.series.push_back(p);
  }
}

inline const char* outcome_name(ReconfigOutcome::Kind kind) {
  switch (kind) {
    case ReconfigOutcome::Kind::kNoop: return "noop";
    case ReconfigOutcome::Kind::kReconfigured: return "reconfigured";
    case ReconfigOutcome::Kind::kCheckpointExit: return "checkpoint_exit";
    case ReconfigOutcome::Kind::kUnrecoverable: return "unrecoverable";
  }
  return "unknown";
}

}  // namespace detail

// Replays node availability changes against the reconfiguration engine.
// The cluster starts with ctx.cluster.nodes nodes (ids 0..N-1). An event
// discards the in-flight iteration, the modeled downtime elapses, and
// training resumes on the repaired pipelines.
inline SimReport run_sim(const PlanContext& ctx, const SimConfig& cfg,
                         const std::vector<TraceBatch>& trace) {
  cfg.job.validate();
  detail::require(cfg.horizon_s > 0.0, ErrorCode::kInvalidArgument, "horizon must be positive");

  std::vector<NodeId> nodes;
  for (int i = 0; i < ctx.cluster.nodes; ++i) nodes.push_back(NodeId(i));
  ExecutionState state = initial_state(ctx, cfg.job, nodes);
  std::uint32_t next_node = static_cast<std::uint32_t>(ctx.cluster.nodes);

  SimReport r;
  r.global_batch = cfg.job.global_batch;
  r.horizon_s = cfg.horizon_s;
  const double horizon_ms = cfg.horizon_s * 1000.0;
  detail::SimClock clock(horizon_ms);
  std::mt19937_64 rng(cfg.seed);

  double iter_ms = iteration_ms(ctx, state);
  detail::push_point(r, {0.0, throughput_sps(cfg.job.global_batch, iter_ms), state.num_alive()});

  bool stopped = false;
  for (const TraceBatch& batch : trace) {
    const double at_ms = batch.t_s * 1000.0;
    if (at_ms >= horizon_ms) break;
    const double lost = clock.train_until(at_ms, iter_ms, true, r);
    double lost_fraction = lost / iter_ms;

    std::vector<NodeId> failed;
    std::vector<NodeId> joined;
    int fail_events = 0;
    int join_events = 0;
    for (const TraceEvent& e : batch.events) {
      if (e.kind == TraceEvent::Kind::kFail) {
        ++fail_events;
        const auto alive = state.alive_nodes();
        std::vector<NodeId> candidates;
        for (NodeId n : alive) {
          if (std::find(failed.begin(), failed.end(), n) == failed.end()) candidates.push_back(n);
        }
        if (e.nodes.empty()) {
          for (NodeId n : detail::pick_victims(candidates, e.count, rng)) failed.push_back(n);
        } else {
          for (NodeId n : e.nodes) {
            if (std::find(candidates.begin(), candidates.end(), n) != candidates.end() &&
                std::find(failed.begin(), failed.end(), n) == failed.end()) {
              failed.push_back(n);
            }
          }
        }
      } else {
        ++join_events;
        if (e.nodes.empty()) {
          for (int i = 0; i < e.count; ++i) joined.push_back(NodeId(next_node++));
        } else {
          const auto alive = state.alive_nodes();
          for (NodeId n : e.nodes) {
            if (std::binary_search(alive.begin(), alive.end(), n) ||
                std::find(joined.begin(), joined.end(), n) != joined.end()) {
              continue;
            }
            joined.push_back(n);
            next_node = std::max(next_node, node_value(n) + 1);
          }
        }
      }
    }
    std::sort(failed.begin(), failed.end());

    auto handle = [&](TraceEvent::Kind kind, const ReconfigOutcome& outcome, int changed) {
      SimEventRecord rec;
      rec.t_s = clock.now() / 1000.0;
      rec.kind = kind;
      rec.nodes_changed = changed;
      rec.outcome = detail::outcome_name(outcome.kind);
      rec.lost_iteration_fraction = lost_fraction;
      lost_fraction = 0.0;
      if (!outcome.continues()) {
        rec.alive_nodes = state.num_alive() - changed;
        rec.pipelines = static_cast<int>(state.pipelines.size());
        r.events.push_back(rec);
        r.exit.kind = outcome.kind == ReconfigOutcome::Kind::kCheckpointExit
                          ? SimExit::Kind::kCheckpointExit
                          : SimExit::Kind::kUnrecoverable;
        r.exit.t_s = clock.now() / 1000.0;
        stopped = true;
        return;
      }
      const double event_s = clock.now() / 1000.0;
      const double spent = clock.pause(outcome.downtime_ms, r);
      state = outcome.new_state;
      iter_ms = iteration_ms(ctx, state);
      rec.downtime_ms = outcome.downtime_ms;
      rec.copy_bytes = outcome.copy_plan.total_bytes();
      rec.alive_nodes = state.num_alive();
      rec.pipelines = static_cast<int>(state.pipelines.size());
      rec.batch_samples = state.batch.total_microbatches() * cfg.job.microbatch;
      rec.iteration_ms = iter_ms;
      r.events.push_back(rec);
      if (spent > 0.0) detail::push_point(r, {event_s, 0.0, rec.alive_nodes});
      detail::push_point(r, {clock.now() / 1000.0, throughput_sps(cfg.job.global_batch, iter_ms),
                             rec.alive_nodes});
    };

    if (fail_events > 0) {
      handle(TraceEvent::Kind::kFail, apply_failures(ctx, state, failed),
             static_cast<int>(failed.size()));
    }
    if (!stopped && join_events > 0) {
      std::optional<ReconfigOutcome> outcome;
      try {
        outcome = apply_join(ctx, state, joined);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNoFeasiblePlan &&
            e.code() != ErrorCode::kInfeasibleDistribution) {
          throw;
        }
      }
      if (outcome) {
        handle(TraceEvent::Kind::kJoin, *outcome, static_cast<int>(joined.size()));
      } else {
        // No plan covers the enlarged cluster; the newcomers stay out.
        SimEventRecord rec;
        rec.t_s = clock.now() / 1000.0;
        rec.kind = TraceEvent::Kind::kJoin;
        rec.outcome = "join_rejected";
        rec.lost_iteration_fraction = lost_fraction;
        rec.alive_nodes = state.num_alive();
        rec.pipelines = static_cast<int>(state.pipelines.size());
        rec.batch_samples = state.batch.total_microbatches() * cfg.job.microbatch;
        rec.iteration_ms = iter_ms;
        r.events.push_back(rec);
      }
    }
    if (stopped || clock.done()) break;
  }

  if (!stopped) {
    clock.train_until(horizon_ms, iter_ms, false, r);
    r.exit.kind = SimExit::Kind::kCompleted;
    r.exit.t_s = horizon_ms / 1000.0;
  }
  r.elapsed_s = clock.now() / 1000.0;
  const double elapsed_ms = clock.now();
  if (elapsed_ms > 0.0) {
    r.breakdown.training = r.training_ms / elapsed_ms;
    r.breakdown.reconfiguration = r.reconfiguration_ms / elapsed_ms;
    r.breakdown.fallback = r.fallback_ms / elapsed_ms;
    r.avg_throughput_sps = static_cast<double>(r.samples_trained) / r.elapsed_s;
  }
  return r;
}

}  // namespace resilplan
