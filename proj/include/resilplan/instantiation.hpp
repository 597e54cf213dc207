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
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resilplan/error.hpp"
#include "resilplan/template_gen.hpp"

namespace resilplan {

struct JobConfig {
  int f = 0;
  std::int64_t global_batch = 1;
  std::int64_t microbatch = 1;

  void validate() const {
    detail::require(f >= 0, ErrorCode::kInvalidArgument, "f must be >= 0");
    detail::require(microbatch >= 1, ErrorCode::kInvalidArgument, "microbatch must be >= 1");
    detail::require(global_batch >= microbatch, ErrorCode::kInvalidArgument,
                    "global batch must be >= microbatch");
  }

  bool operator==(const JobConfig&) const = default;
};

// Pipeline counts per template, indexed like NodeSpec::sizes.
struct FeasibleSet {
  std::vector<int> counts;

  int total_pipelines() const {
    int sum = 0;
    for (int c : counts) sum += c;
    return sum;
  }
  int total_nodes(const NodeSpec& spec) const {
    int sum = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) sum += counts[i] * spec.sizes[i];
    return sum;
  }

  auto operator<=>(const FeasibleSet&) const = default;
};

// All ways to cover exactly `nodes` nodes with the templates, keeping only
// those with at least f+1 pipelines. Lexicographic order on counts.
//
// Coin-change table: X(i, m) = X(i-1, m) ++ inc_i(X(i, m - n_i)), rolled
// over i so only one row is live. Each list is stored flat with stride p.
inline std::vector<FeasibleSet> enumerate_sets(const NodeSpec& spec, int nodes, int f) {
  detail::require(f >= 0, ErrorCode::kInvalidArgument, "f must be >= 0");
  if (nodes < (f + 1) * spec.n0) {
    throw Error(ErrorCode::kInsufficientReplicas, "insufficient nodes for f+1 replicas");
  }
  const int p = spec.p();
  std::vector<std::vector<int>> row(nodes + 1);
  row[0].assign(p, 0);
  for (int i = 0; i < p; ++i) {
    const int size = spec.sizes[i];
    for (int m = size; m <= nodes; ++m) {
      const std::vector<int>& src = row[m - size];
      std::vector<int>& dst = row[m];
      const std::size_t base = dst.size();
      dst.insert(dst.end(), src.begin(), src.end());
      for (std::size_t at = base + i; at < dst.size(); at += p) ++dst[at];
    }
  }

  std::vector<FeasibleSet> out;
  const std::vector<int>& flat = row[nodes];
  for (std::size_t at = 0; at < flat.size(); at += p) {
    FeasibleSet set;
    set.counts.assign(flat.begin() + at, flat.begin() + at + p);
    if (set.total_pipelines() >= f + 1) out.push_back(std::move(set));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Smallest global batch >= B that gives each of `pipelines` pipelines at
// least one microbatch of size b.
inline std::int64_t recommend_batch(int pipelines, std::int64_t microbatch,
                                    std::int64_t global_batch) {
  const std::int64_t x = std::max(pipelines, 1);
  const std::int64_t b = std::max<std::int64_t>(microbatch, 1);
  const std::int64_t target = std::max(global_batch, x * b);
  return (target + b - 1) / b * b;
}

struct BatchAssignment {
  std::vector<int> microbatches;
  std::vector<double> microbatch_ms;
  double objective = 0.0;

  std::int64_t total_microbatches() const {
    std::int64_t sum = 0;
    for (int n : microbatches) sum += n;
    return sum;
  }

  bool operator==(const BatchAssignment&) const = default;
};

// Sum of squared deviations of per-pipeline batch times from their mean.
inline double batch_objective(std::span<const int> microbatches,
                              std::span<const double> microbatch_ms) {
  const std::size_t x = microbatches.size();
  if (x == 0) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < x; ++i) mean += microbatches[i] * microbatch_ms[i];
  mean /= static_cast<double>(x);
  double sum = 0.0;
  for (std::size_t i = 0; i < x; ++i) {
    const double dev = microbatches[i] * microbatch_ms[i] - mean;
    sum += dev * dev;
  }
  return sum;
}

namespace detail {

// Exact minimizer of sum_i (t_i n_i - mu)^2 subject to sum n_i = total and
// n_i >= 1. Separable convex, so taking the cheapest increments is optimal.
inline std::vector<int> anchored_allocation(std::span<const double> t, std::int64_t total,
                                            double mu) {
  const std::size_t x = t.size();
  std::vector<int> n(x, 1);
  auto marginal = [&](std::size_t i) { return t[i] * t[i] * (2.0 * n[i] + 1.0) - 2.0 * mu * t[i]; };
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t i = 0; i < x; ++i) heap.emplace(marginal(i), i);
  for (std::int64_t r = static_cast<std::int64_t>(x); r < total; ++r) {
    const std::size_t i = heap.top().second;
    heap.pop();
    ++n[i];
    heap.emplace(marginal(i), i);
  }
  return n;
}

}  // namespace detail

// Splits B/b microbatches across pipelines with per-microbatch times
// `microbatch_ms`, minimizing the spread of per-pipeline batch times.
//
// The objective equals min over mu of sum_i (t_i n_i - mu)^2, and for fixed
// mu that inner problem is solved exactly by anchored_allocation. We sweep mu
// upward across the window that must contain the optimal mean, moving one
// microbatch at each breakpoint where a slower pipeline's next increment
// becomes cheaper than a faster pipeline's last one, and keep the best
// assignment seen. The window half-width sqrt(F) follows from
// sum_i (t_i n_i - mean) / t_i = (mu_c - mean) * sum_i 1/t_i and Cauchy-Schwarz.
inline BatchAssignment distribute_batch(std::span<const double> microbatch_ms,
                                        std::int64_t global_batch, std::int64_t microbatch) {
  detail::require(microbatch >= 1, ErrorCode::kInvalidArgument, "microbatch must be >= 1");
  detail::require(!microbatch_ms.empty(), ErrorCode::kInvalidArgument,
                  "need at least one pipeline");
  for (double t : microbatch_ms) {
    detail::require(std::isfinite(t) && t > 0.0, ErrorCode::kInvalidArgument,
                    "per-microbatch times must be positive");
  }
  const int x = static_cast<int>(microbatch_ms.size());
  if (global_batch % microbatch != 0) {
    throw Error(ErrorCode::kBatchNotDivisible,
                "global batch is not divisible by the microbatch size",
                recommend_batch(x, microbatch, global_batch));
  }
  const std::int64_t total = global_batch / microbatch;
  if (total < x) {
    throw Error(ErrorCode::kInfeasibleDistribution, "infeasible distribution",
                recommend_batch(x, microbatch, global_batch));
  }

  BatchAssignment out;
  out.microbatch_ms.assign(microbatch_ms.begin(), microbatch_ms.end());
  if (x == 1) {
    out.microbatches = {static_cast<int>(total)};
    out.objective = 0.0;
    return out;
  }

  double inv_sum = 0.0;
  for (double t : microbatch_ms) inv_sum += 1.0 / t;
  const double mu_c = static_cast<double>(total) / inv_sum;

  std::vector<int> best = detail::anchored_allocation(microbatch_ms, total, mu_c);
  double best_obj = batch_objective(best, microbatch_ms);
  const double radius = std::sqrt(best_obj) * (1.0 + 1e-9) + 1e-12;
  const double hi = mu_c + radius;

  std::vector<int> n = detail::anchored_allocation(microbatch_ms, total, mu_c - radius);
  auto consider = [&] {
    const double obj = batch_objective(n, microbatch_ms);
    if (obj < best_obj) {
      best_obj = obj;
      best = n;
    }
  };
  consider();

  // Every move shifts a microbatch to a strictly slower pipeline, so the loop
  // terminates after at most total * x moves.
  for (;;) {
    double next_mu = std::numeric_limits<double>::infinity();
    int to = -1;
    int from = -1;
    for (int i = 0; i < x; ++i) {
      const double ti = microbatch_ms[i];
      for (int j = 0; j < x; ++j) {
        const double tj = microbatch_ms[j];
        if (!(ti > tj) || n[j] <= 1) continue;
        const double mu = (ti * ti * (2.0 * n[i] + 1.0) - tj * tj * (2.0 * n[j] - 1.0)) /
                          (2.0 * (ti - tj));
        if (mu < next_mu) {
          next_mu = mu;
          to = i;
          from = j;
        }
      }
    }
    if (to < 0 || next_mu > hi) break;
    ++n[to];
    --n[from];
    consider();
  }

  out.microbatches = std::move(best);
  out.objective = best_obj;
  return out;
}

struct InstantiationPlan {
  FeasibleSet set;
  std::vector<int> pipeline_nodes;  // template size of each pipeline
  BatchAssignment batch;
  double iteration_ms = 0.0;
  double throughput_sps = 0.0;

  bool operator==(const InstantiationPlan&) const = default;
};

inline std::vector<int> expand_pipelines(const NodeSpec& spec, const FeasibleSet& set) {
  std::vector<int> out;
  for (std::size_t i = 0; i < set.counts.size(); ++i) {
    out.insert(out.end(), set.counts[i], spec.sizes[i]);
  }
  return out;
}

// Slowest pipeline's estimated iteration time under the given batch split.
inline double plan_iteration_ms(const TemplateSet& ts, std::span<const int> pipeline_nodes,
                                std::span<const int> microbatches) {
  double worst = 0.0;
  for (std::size_t i = 0; i < pipeline_nodes.size(); ++i) {
    worst = std::max(worst, ts.at(pipeline_nodes[i]).iteration_ms(microbatches[i]));
  }
  return worst;
}

inline double throughput_sps(std::int64_t global_batch, double iteration_ms) {
  return static_cast<double>(global_batch) / (iteration_ms / 1000.0);
}

// Batch split and throughput for pipelines instantiated from the given
// template sizes, in order.
inline InstantiationPlan evaluate_pipelines(const TemplateSet& ts,
                                            std::vector<int> pipeline_nodes,
                                            const JobConfig& job) {
  InstantiationPlan plan;
  std::vector<double> times;
  times.reserve(pipeline_nodes.size());
  for (int n : pipeline_nodes) times.push_back(ts.at(n).microbatch_ms());
  plan.batch = distribute_batch(times, job.global_batch, job.microbatch);
  plan.iteration_ms = plan_iteration_ms(ts, pipeline_nodes, plan.batch.microbatches);
  plan.throughput_sps = throughput_sps(job.global_batch, plan.iteration_ms);
  plan.pipeline_nodes = std::move(pipeline_nodes);
  return plan;
}

struct CandidatePlan {
  FeasibleSet set;
  std::optional<InstantiationPlan> plan;  // empty if the batch cannot be split
  std::optional<std::int64_t> recommended_global_batch;
};

inline std::vector<CandidatePlan> evaluate_candidates(const TemplateSet& ts, int nodes,
                                                      const JobConfig& job) {
  job.validate();
  std::vector<CandidatePlan> out;
  for (auto& set : enumerate_sets(ts.spec, nodes, job.f)) {
    CandidatePlan candidate;
    try {
      InstantiationPlan plan = evaluate_pipelines(ts, expand_pipelines(ts.spec, set), job);
      plan.set = set;
      candidate.plan = std::move(plan);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInfeasibleDistribution &&
          e.code() != ErrorCode::kBatchNotDivisible) {
        throw;
      }
      candidate.recommended_global_batch = e.recommended_global_batch();
    }
    candidate.set = std::move(set);
    out.push_back(std::move(candidate));
  }
  return out;
}

// Highest-throughput plan for `nodes` nodes. Ties go to fewer pipelines,
// then to the lexicographically smaller counts vector.
inline InstantiationPlan select_plan(const TemplateSet& ts, int nodes, const JobConfig& job) {
  const auto candidates = evaluate_candidates(ts, nodes, job);
  if (candidates.empty()) {
    throw Error(ErrorCode::kNoFeasiblePlan,
                "no template combination covers " + std::to_string(nodes) + " nodes");
  }
  const InstantiationPlan* best = nullptr;
  int fewest_pipelines = std::numeric_limits<int>::max();
  for (const auto& c : candidates) {
    fewest_pipelines = std::min(fewest_pipelines, c.set.total_pipelines());
    if (!c.plan) continue;
    if (best == nullptr || c.plan->throughput_sps > best->throughput_sps ||
        (c.plan->throughput_sps == best->throughput_sps &&
         c.set.total_pipelines() < best->set.total_pipelines())) {
      best = &*c.plan;
    }
  }
  if (best == nullptr) {
    throw Error(ErrorCode::kInfeasibleDistribution,
                "no candidate plan can distribute the global batch",
                recommend_batch(fewest_pipelines, job.microbatch, job.global_batch));
  }
  return *best;
}

}  // namespace resilplan
