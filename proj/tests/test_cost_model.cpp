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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "resilplan/cost_model.hpp"
#include "resilplan/json_io.hpp"

namespace resilplan {
namespace {

constexpr std::int64_t kGB = 1'000'000'000;

LayerProfileSet Unif6() { return synth_profile(6, 1, 2.0, 4.0, 1.0, 100'000'000); }

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

std::string TempPath(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("resilplan_cm_" + name)).string();
}

TEST(SynthProfileTest, Unif6Layers) {
  const auto p = Unif6();
  EXPECT_EQ(p.num_layers(), 6);
  EXPECT_EQ(p.gpus_per_node(), 1);
  EXPECT_EQ(p.layer(0).fwd_ms[0], 2.0);
  EXPECT_EQ(p.layer(5).bwd_ms[0], 4.0);
}

TEST(SynthProfileTest, TensorParallelScaling) {
  const auto p = synth_profile(2, 2, 2.0, 4.0, 1.0, 100'000'000);
  EXPECT_DOUBLE_EQ(p.layer(1).fwd_ms[1], 1.0);
  EXPECT_DOUBLE_EQ(p.layer(1).bwd_ms[1], 2.0);
  EXPECT_TRUE(p.monotonicity_warnings().empty());
}

TEST(SynthProfileTest, RejectsZeroLayers) {
  EXPECT_EQ(CodeOf([] { synth_profile(0, 1, 2.0, 4.0, 1.0, 100'000'000); }),
            ErrorCode::kInvalidArgument);
  EXPECT_THROW(synth_profile(3, 1, 2.0, 4.0, 0.0, 1), Error);
}

TEST(StageCostTest, DirectSums) {
  const auto p = Unif6();
  const StageCost half = stage_cost(p, 0, 3, 1);
  EXPECT_EQ(half.fwd_ms, 6.0);
  EXPECT_EQ(half.bwd_ms, 12.0);
  const StageCost all = stage_cost(p, 0, 6, 1);
  EXPECT_EQ(all.fwd_ms, 12.0);
  EXPECT_EQ(all.bwd_ms, 24.0);
  EXPECT_EQ(all.total_ms(), 36.0);
}

TEST(StageCostTest, EmptyRangeAndBadGpuCount) {
  const auto p = Unif6();
  try {
    stage_cost(p, 2, 2, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyStage);
    EXPECT_STREQ(e.what(), "empty stage");
  }
  EXPECT_EQ(CodeOf([&] { stage_cost(p, 0, 2, 2); }), ErrorCode::kInvalidArgument);
}

TEST(StageCostTest, AdditiveAndMonotone) {
  std::vector<LayerProfile> layers;
  for (int i = 0; i < 7; ++i) {
    layers.push_back({"x", {1.0 + i, 0.5 + i}, {2.0 + i, 1.5 + i}, 10, 0});
  }
  const LayerProfileSet p(layers, 2, 1);
  for (int d = 1; d <= 2; ++d) {
    for (int u = 0; u < 7; ++u) {
      for (int v = u + 1; v < 7; ++v) {
        for (int w = v + 1; w <= 7; ++w) {
          const auto a = stage_cost(p, u, v, d);
          const auto b = stage_cost(p, v, w, d);
          const auto ab = stage_cost(p, u, w, d);
          EXPECT_DOUBLE_EQ(ab.fwd_ms, a.fwd_ms + b.fwd_ms);
          EXPECT_DOUBLE_EQ(ab.bwd_ms, a.bwd_ms + b.bwd_ms);
          EXPECT_GE(ab.total_ms(), a.total_ms());
        }
      }
    }
  }
}

TEST(ProfileValidationTest, Errors) {
  EXPECT_EQ(CodeOf([] { LayerProfileSet({}, 1, 1); }), ErrorCode::kEmptyModel);
  EXPECT_EQ(CodeOf([] { LayerProfileSet({{"a", {1.0}, {1.0}, 10, 0}}, 2, 1); }),
            ErrorCode::kMissingDeviceEntry);
  EXPECT_EQ(CodeOf([] { LayerProfileSet({{"a", {0.0}, {1.0}, 10, 0}}, 1, 1); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([] { LayerProfileSet({{"a", {1.0}, {1.0}, 0, 0}}, 1, 1); }),
            ErrorCode::kInvalidArgument);
}

TEST(ProfileValidationTest, NonMonotoneIsAWarningOnly) {
  const LayerProfileSet p({{"a", {1.0, 2.0}, {1.0, 1.0}, 10, 0}}, 2, 1);
  EXPECT_EQ(p.monotonicity_warnings().size(), 1u);
}

TEST(MinNodesTest, CeilOfUsableSlice) {
  const ClusterSpec cluster{8, 4, 40 * kGB};
  EXPECT_EQ(min_nodes_for_bytes(100 * kGB, cluster, 0.8), 1);
  EXPECT_EQ(min_nodes_for_bytes(300 * kGB, cluster, 0.8), 3);
  const ClusterSpec small{4, 4, 40 * kGB};
  try {
    min_nodes_for_bytes(10'000 * kGB, small, 0.8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kModelDoesNotFit);
    EXPECT_STREQ(e.what(), "model does not fit");
  }
}

TEST(MinNodesTest, CountsActivationsPerSample) {
  // 4 layers * 10 GB state + 2 samples * 4 * 5 GB activations = 80 GB.
  const auto p = synth_profile(4, 1, 1.0, 1.0, 1.0, 10 * kGB, 5 * kGB);
  const ClusterSpec cluster{10, 1, 20 * kGB};
  EXPECT_EQ(training_bytes(p, 2), 80 * kGB);
  EXPECT_EQ(min_nodes(p, cluster, 0.8, 2), 5);
  EXPECT_EQ(min_nodes(p, cluster, 0.8, 1), 4);  // 60 / 16 -> 3.75
}

TEST(MinNodesTest, Monotonicity) {
  const std::int64_t bytes = 500 * kGB;
  int last = 1 << 30;
  for (std::int64_t mem = 10; mem <= 80; mem += 10) {
    const int n = min_nodes_for_bytes(bytes, ClusterSpec{64, 2, mem * kGB}, 0.8);
    EXPECT_LE(n, last);
    last = n;
  }
  last = 0;
  for (std::int64_t b = 50; b <= 500; b += 50) {
    const int n = min_nodes_for_bytes(b * kGB, ClusterSpec{64, 2, 40 * kGB}, 0.8);
    EXPECT_GE(n, last);
    last = n;
  }
}

TEST(ProfileJsonTest, RoundTrip) {
  std::vector<LayerProfile> layers;
  layers.push_back({"embed", {1.25, 0.75}, {2.5, 1.5}, 123456789, 42});
  layers.push_back({"block", {3.0, 1.6}, {6.1, 3.3}, 987654321, 7});
  const LayerProfileSet p(layers, 2, 4);
  const std::string path = TempPath("roundtrip.json");
  save_profile(path, p);
  EXPECT_EQ(load_profile(path), p);
  std::remove(path.c_str());
}

TEST(ProfileJsonTest, MissingDeviceEntry) {
  const std::string path = TempPath("missing.json");
  std::ofstream(path) << R"({"gpus_per_node": 2, "microbatch_reference": 1, "layers": [
    {"name": "a", "state_bytes": 1, "fwd_ms": {"1": 1, "2": 1}, "bwd_ms": {"1": 1, "2": 1}},
    {"name": "b", "state_bytes": 1, "fwd_ms": {"1": 1, "2": 1}, "bwd_ms": {"1": 1, "2": 1}},
    {"name": "c", "state_bytes": 1, "fwd_ms": {"1": 1, "2": 1}, "bwd_ms": {"1": 1, "2": 1}},
    {"name": "d", "state_bytes": 1, "fwd_ms": {"1": 1}, "bwd_ms": {"1": 1, "2": 1}}]})";
  try {
    load_profile(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingDeviceEntry);
    EXPECT_NE(std::string(e.what()).find("missing device-count entry"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(ProfileJsonTest, EmptyAndMalformed) {
  const std::string path = TempPath("empty.json");
  std::ofstream(path) << R"({"gpus_per_node": 1, "layers": []})";
  EXPECT_EQ(CodeOf([&] { load_profile(path); }), ErrorCode::kEmptyModel);
  std::ofstream(path) << "{not json";
  EXPECT_EQ(CodeOf([&] { load_profile(path); }), ErrorCode::kParse);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace resilplan
