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

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "resilplan/error.hpp"

namespace resilplan {

// Per-layer execution profile. Index 0 of fwd_ms/bwd_ms is the time on one
// GPU, index d-1 the time with d-way intra-node tensor parallelism.
struct LayerProfile {
  std::string name;
  std::vector<double> fwd_ms;
  std::vector<double> bwd_ms;
  std::int64_t state_bytes = 0;
  std::int64_t activation_bytes_per_sample = 0;

  bool operator==(const LayerProfile&) const = default;
};

struct StageCost {
  double fwd_ms = 0.0;
  double bwd_ms = 0.0;

  double total_ms() const { return fwd_ms + bwd_ms; }
  bool operator==(const StageCost&) const = default;
};

// An ordered, validated list of layer profiles measured at one reference
// microbatch size. Immutable after construction.
class LayerProfileSet {
 public:
  LayerProfileSet(std::vector<LayerProfile> layers, int gpus_per_node,
                  int microbatch_reference)
      : layers_(std::move(layers)),
        gpus_per_node_(gpus_per_node),
        microbatch_reference_(microbatch_reference) {
    detail::require(!layers_.empty(), ErrorCode::kEmptyModel, "empty model");
    detail::require(gpus_per_node_ >= 1, ErrorCode::kInvalidArgument,
                    "gpus_per_node must be >= 1");
    detail::require(microbatch_reference_ >= 1, ErrorCode::kInvalidArgument,
                    "microbatch_reference must be >= 1");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerProfile& layer = layers_[i];
      const std::string where = "layer " + std::to_string(i) + " (" + layer.name + ")";
      detail::require(static_cast<int>(layer.fwd_ms.size()) == gpus_per_node_ &&
                          static_cast<int>(layer.bwd_ms.size()) == gpus_per_node_,
                      ErrorCode::kMissingDeviceEntry,
                      "missing device-count entry in " + where);
      for (int d = 0; d < gpus_per_node_; ++d) {
        detail::require(std::isfinite(layer.fwd_ms[d]) && layer.fwd_ms[d] > 0.0 &&
                            std::isfinite(layer.bwd_ms[d]) && layer.bwd_ms[d] > 0.0,
                        ErrorCode::kInvalidArgument,
                        "non-positive time in " + where);
      }
      detail::require(layer.state_bytes > 0, ErrorCode::kInvalidArgument,
                      "state_bytes must be positive in " + where);
      detail::require(layer.activation_bytes_per_sample >= 0,
                      ErrorCode::kInvalidArgument,
                      "negative activation bytes in " + where);
    }
  }

  const std::vector<LayerProfile>& layers() const { return layers_; }
  const LayerProfile& layer(int i) const { return layers_.at(i); }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  int gpus_per_node() const { return gpus_per_node_; }
  int microbatch_reference() const { return microbatch_reference_; }

  // Layers whose time grows with more GPUs. Not an error; callers may log.
  std::vector<std::string> monotonicity_warnings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (int d = 1; d < gpus_per_node_; ++d) {
        if (layers_[i].fwd_ms[d] > layers_[i].fwd_ms[d - 1] ||
            layers_[i].bwd_ms[d] > layers_[i].bwd_ms[d - 1]) {
          out.push_back("layer " + std::to_string(i) + " slower at " +
                        std::to_string(d + 1) + " GPUs than at " +
                        std::to_string(d));
          break;
        }
      }
    }
    return out;
  }

  std::int64_t total_state_bytes() const {
    std::int64_t sum = 0;
    for (const auto& l : layers_) sum += l.state_bytes;
    return sum;
  }

  std::int64_t state_bytes(int begin, int end) const {
    std::int64_t sum = 0;
    for (int i = begin; i < end; ++i) sum += layers_[i].state_bytes;
    return sum;
  }

  bool operator==(const LayerProfileSet&) const = default;

 private:
  std::vector<LayerProfile> layers_;
  int gpus_per_node_;
  int microbatch_reference_;
};

struct ClusterSpec {
  int nodes = 1;
  int gpus_per_node = 1;
  std::int64_t gpu_mem_bytes = 0;
  double xfer_gbps = 100.0;
  double coord_overhead_ms = 1000.0;

  void validate() const {
    detail::require(nodes >= 1, ErrorCode::kInvalidArgument, "cluster needs >= 1 node");
    detail::require(gpus_per_node >= 1, ErrorCode::kInvalidArgument,
                    "cluster needs >= 1 GPU per node");
    detail::require(gpu_mem_bytes > 0, ErrorCode::kInvalidArgument,
                    "gpu_mem_bytes must be positive");
    detail::require(xfer_gbps > 0.0, ErrorCode::kInvalidArgument,
                    "xfer_gbps must be positive");
    detail::require(coord_overhead_ms >= 0.0, ErrorCode::kInvalidArgument,
                    "coord_overhead_ms must be non-negative");
  }

  bool operator==(const ClusterSpec&) const = default;
};

// L identical layers whose time shrinks as 1 / (1 + tp_eff * (d - 1)).
inline LayerProfileSet synth_profile(int num_layers, int gpus_per_node, double fwd_ms,
                                     double bwd_ms, double tp_eff,
                                     std::int64_t state_bytes,
                                     std::int64_t activation_bytes_per_sample = 0,
                                     int microbatch_reference = 1) {
  detail::require(num_layers >= 1, ErrorCode::kInvalidArgument, "L must be >= 1");
  detail::require(gpus_per_node >= 1, ErrorCode::kInvalidArgument, "M must be >= 1");
  detail::require(fwd_ms > 0.0 && bwd_ms > 0.0, ErrorCode::kInvalidArgument,
                  "layer times must be positive");
  detail::require(tp_eff > 0.0 && tp_eff <= 1.0, ErrorCode::kInvalidArgument,
                  "tp_eff must be in (0, 1]");
  detail::require(state_bytes > 0, ErrorCode::kInvalidArgument,
                  "state_bytes must be positive");
  std::vector<LayerProfile> layers;
  layers.reserve(num_layers);
  for (int i = 0; i < num_layers; ++i) {
    LayerProfile layer;
    layer.name = "layer" + std::to_string(i);
    for (int d = 1; d <= gpus_per_node; ++d) {
      const double speedup = 1.0 + tp_eff * (d - 1);
      layer.fwd_ms.push_back(fwd_ms / speedup);
      layer.bwd_ms.push_back(bwd_ms / speedup);
    }
    layer.state_bytes = state_bytes;
    layer.activation_bytes_per_sample = activation_bytes_per_sample;
    layers.push_back(std::move(layer));
  }
  return LayerProfileSet(std::move(layers), gpus_per_node, microbatch_reference);
}

// Forward and backward time of layers [begin, end) on `gpus` GPUs.
inline StageCost stage_cost(const LayerProfileSet& profile, int begin, int end, int gpus) {
  detail::require(begin >= 0 && end <= profile.num_layers(), ErrorCode::kInvalidArgument,
                  "layer range out of bounds");
  detail::require(begin < end, ErrorCode::kEmptyStage, "empty stage");
  detail::require(gpus >= 1 && gpus <= profile.gpus_per_node(),
                  ErrorCode::kInvalidArgument, "gpu count out of range");
  StageCost cost;
  for (int i = begin; i < end; ++i) {
    cost.fwd_ms += profile.layers()[i].fwd_ms[gpus - 1];
    cost.bwd_ms += profile.layers()[i].bwd_ms[gpus - 1];
  }
  return cost;
}

inline constexpr double kDefaultMemoryUtilization = 0.8;

// Bytes needed to train the model: model state plus activations for
// `samples_per_gpu` samples.
inline std::int64_t training_bytes(const LayerProfileSet& profile, int samples_per_gpu) {
  std::int64_t act = 0;
  for (const auto& l : profile.layers()) act += l.activation_bytes_per_sample;
  return profile.total_state_bytes() + static_cast<std::int64_t>(samples_per_gpu) * act;
}

// Smallest node count whose usable memory holds `total_bytes`.
inline int min_nodes_for_bytes(std::int64_t total_bytes, const ClusterSpec& cluster,
                               double util) {
  detail::require(util > 0.0 && util <= 1.0, ErrorCode::kInvalidArgument,
                  "util must be in (0, 1]");
  const long double per_node = static_cast<long double>(cluster.gpus_per_node) *
                               static_cast<long double>(cluster.gpu_mem_bytes) * util;
  detail::require(per_node > 0.0L, ErrorCode::kInvalidArgument,
                  "cluster has no usable memory");
  if (static_cast<long double>(total_bytes) > per_node * cluster.nodes) {
    throw Error(ErrorCode::kModelDoesNotFit, "model does not fit");
  }
  const long double ratio = static_cast<long double>(total_bytes) / per_node;
  const auto n0 = static_cast<int>(std::ceil(ratio));
  return n0 < 1 ? 1 : n0;
}

inline int min_nodes(const LayerProfileSet& profile, const ClusterSpec& cluster,
                     double util = kDefaultMemoryUtilization, int samples_per_gpu = 1) {
  detail::require(samples_per_gpu >= 1, ErrorCode::kInvalidArgument,
                  "samples_per_gpu must be >= 1");
  detail::require(cluster.gpus_per_node == profile.gpus_per_node(),
                  ErrorCode::kInvalidArgument,
                  "cluster and profile disagree on GPUs per node");
  return min_nodes_for_bytes(training_bytes(profile, samples_per_gpu), cluster, util);
}

}  // namespace resilplan
