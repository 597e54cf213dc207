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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "resilplan/cli.hpp"

namespace resilplan {
namespace {

namespace fs = std::filesystem;

std::string Slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("resilplan_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    // UNIF6: 6 x 1e8 state bytes; 0.5 GB GPUs at 80% give n0 = 2.
    save_profile(Path("profile.json"), synth_profile(6, 1, 2.0, 4.0, 1.0, 100'000'000));
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  std::string Write(const std::string& name, const std::string& text) const {
    std::ofstream(Path(name)) << text;
    return Path(name);
  }

  std::string Cluster(int nodes) const {
    return Write("cluster.json", json{{"nodes", nodes},
                                      {"gpus_per_node", 1},
                                      {"gpu_mem_bytes", 500'000'000},
                                      {"xfer_gbps", 100.0},
                                      {"coord_overhead_ms", 1000.0}}
                                     .dump());
  }

  std::string Job(int f, std::int64_t b_global, std::int64_t b_micro) const {
    return Write("job.json", json{{"f", f}, {"global_batch", b_global}, {"microbatch", b_micro}}.dump());
  }

  // Returns the template file path; fails the test on a nonzero exit.
  std::string Templates(int nodes, int f) {
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_templates(Path("profile.json"), Cluster(nodes), f, Path("templates.json"), out, err), 0)
        << err.str();
    return Path("templates.json");
  }

  fs::path dir_;
};

TEST_F(CliTest, TemplatesSummaryAndDeterminism) {
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_templates(Path("profile.json"), Cluster(7), 1, Path("t1.json"), out, err), 0) << err.str();
  const json summary = json::parse(out.str());
  EXPECT_EQ(summary["n0"], 2);
  EXPECT_EQ(summary["p"], 4);
  EXPECT_EQ(summary["sizes"], (std::vector<int>{2, 3, 4, 5}));
  const json file = json::parse(Slurp(Path("t1.json")));
  EXPECT_EQ(file["node_spec"]["sizes"], (std::vector<int>{2, 3, 4, 5}));
  EXPECT_EQ(file["templates"].size(), 4u);

  std::ostringstream out2, err2;
  ASSERT_EQ(cli::cmd_templates(Path("profile.json"), Cluster(7), 1, Path("t2.json"), out2, err2), 0);
  EXPECT_EQ(Slurp(Path("t1.json")), Slurp(Path("t2.json")));
}

TEST_F(CliTest, TemplatesBelowFloor) {
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_templates(Path("profile.json"), Cluster(3), 1, Path("t.json"), out, err), 0);
  const json e = json::parse(err.str());
  EXPECT_EQ(e["error"], "insufficient_replicas");
  EXPECT_EQ(e["message"], "cannot maintain f+1 replicas");
}

TEST_F(CliTest, TemplateFileRoundTrip) {
  const std::string path = Templates(7, 1);
  const PlanContext ctx = load_plan_context(path);
  const auto profile = load_profile(Path("profile.json"));
  EXPECT_EQ(ctx.templates, generate_template_set(profile, ctx.cluster, 1, 2));

  json doc = json::parse(Slurp(path));
  doc["templates"][0]["t1_ms"] = 1.0;
  Write("tampered.json", doc.dump());
  try {
    load_plan_context(Path("tampered.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
  }
}

TEST_F(CliTest, PlanThirteenNodes) {
  const std::string t = Templates(6, 1);  // sizes (2,3,4)
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_plan(t, 13, Job(1, 96, 4), false, Path("plan.json"), out, err), 0) << err.str();
  const json plan = json::parse(Slurp(Path("plan.json")));
  const auto counts = plan["counts"].get<std::vector<int>>();
  ASSERT_EQ(counts.size(), 3u);
  EXPECT_EQ(2 * counts[0] + 3 * counts[1] + 4 * counts[2], 13);
  int samples = 0;
  for (const auto& p : plan["pipelines"]) samples += p["microbatches"].get<int>() * 4;
  EXPECT_EQ(samples, 96);
  EXPECT_GT(plan["throughput_sps"].get<double>(), 0.0);
  EXPECT_GT(plan["iteration_ms"].get<double>(), 0.0);
}

TEST_F(CliTest, PlanInfeasibleBatchRecommends) {
  const std::string t = Templates(6, 1);
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_plan(t, 4, Job(1, 4, 4), false, Path("plan.json"), out, err), 0);
  const json e = json::parse(err.str());
  EXPECT_EQ(e["error"], "infeasible_distribution");
  EXPECT_EQ(e["recommended_global_batch"], 8);
}

TEST_F(CliTest, PlanAllListsCandidates) {
  const std::string t = Templates(6, 1);
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_plan(t, 7, Job(1, 64, 4), true, Path("all.json"), out, err), 0) << err.str();
  const json doc = json::parse(Slurp(Path("all.json")));
  ASSERT_EQ(doc["candidates"].size(), 2u);
  EXPECT_EQ(doc["candidates"][0]["counts"], (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(doc["candidates"][1]["counts"], (std::vector<int>{2, 1, 0}));
  EXPECT_TRUE(doc["candidates"][0].contains("throughput_sps"));
  EXPECT_FALSE(doc["selected"].is_null());
}

TEST_F(CliTest, PlanRejectsMismatchedF) {
  const std::string t = Templates(6, 1);
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_plan(t, 6, Job(2, 64, 4), false, Path("p.json"), out, err), 0);
  EXPECT_EQ(json::parse(err.str())["error"], "invalid_argument");
}

TEST_F(CliTest, BatchForGivenCounts) {
  const std::string t = Templates(6, 1);
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_batch(t, "1,1,0", Job(1, 40, 4), out, err), 0) << err.str();
  const json doc = json::parse(out.str());
  EXPECT_EQ(doc["nodes"], 5);
  ASSERT_EQ(doc["pipelines"].size(), 2u);
  EXPECT_EQ(doc["pipelines"][0]["microbatches"].get<int>() + doc["pipelines"][1]["microbatches"].get<int>(), 10);

  std::ostringstream out2, err2;
  EXPECT_NE(cli::cmd_batch(t, "1,x,0", Job(1, 40, 4), out2, err2), 0);
  EXPECT_NE(cli::cmd_batch(t, "1,1", Job(1, 40, 4), out2, err2), 0);
}

TEST_F(CliTest, SimulateEmptyTraceAndExit) {
  const std::string t = Templates(7, 1);
  const std::string job = Job(1, 64, 4);
  Write("empty.jsonl", "");
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_simulate(t, Path("empty.jsonl"), job, 60.0, 1, Path("r.json"), Path("r.csv"), out, err), 0)
      << err.str();
  const json report = json::parse(Slurp(Path("r.json")));
  EXPECT_EQ(report["breakdown"]["training"], 1.0);
  EXPECT_EQ(report["exit"]["kind"], "completed");

  Write("drop.jsonl", "{\"t_s\":5,\"kind\":\"fail\",\"count\":4}\n");
  std::ostringstream out2, err2;
  EXPECT_EQ(cli::cmd_simulate(t, Path("drop.jsonl"), job, 60.0, 1, Path("d.json"), std::nullopt, out2, err2), 0)
      << err2.str();
  EXPECT_EQ(json::parse(Slurp(Path("d.json")))["exit"]["kind"], "checkpoint_exit");
  EXPECT_EQ(json::parse(out2.str())["exit"], "checkpoint_exit");
}

TEST_F(CliTest, SimulateSameSeedSameBytes) {
  const std::string t = Templates(7, 1);
  Write("trace.jsonl",
        "{\"t_s\":5,\"kind\":\"fail\",\"count\":1}\n"
        "{\"t_s\":9,\"kind\":\"join\",\"count\":1}\n"
        "{\"t_s\":14,\"kind\":\"fail\",\"count\":2}\n");
  std::ostringstream o1, e1, o2, e2;
  ASSERT_EQ(cli::cmd_simulate(t, Path("trace.jsonl"), Job(1, 64, 4), 30.0, 77, Path("a.json"), Path("a.csv"), o1, e1), 0);
  ASSERT_EQ(cli::cmd_simulate(t, Path("trace.jsonl"), Job(1, 64, 4), 30.0, 77, Path("b.json"), Path("b.csv"), o2, e2), 0);
  EXPECT_EQ(Slurp(Path("a.csv")), Slurp(Path("b.csv")));
  EXPECT_EQ(Slurp(Path("a.json")), Slurp(Path("b.json")));
}

TEST_F(CliTest, SimulateBadTrace) {
  const std::string t = Templates(7, 1);
  Write("bad.jsonl", "{\"t_s\":5,\"kind\":\"fail\",\"count\":1}\n{\"t_s\":2,\"kind\":\"fail\",\"count\":1}\n");
  std::ostringstream out, err;
  EXPECT_NE(cli::cmd_simulate(t, Path("bad.jsonl"), Job(1, 64, 4), 30.0, 1, Path("x.json"), std::nullopt, out, err), 0);
  EXPECT_EQ(json::parse(err.str())["error"], "parse_error");
}

TEST_F(CliTest, ReconfigOutcomeJson) {
  const PlanContext ctx = load_plan_context(Templates(7, 1));
  std::vector<NodeId> nodes;
  for (int i = 0; i < 7; ++i) nodes.push_back(NodeId(i));
  const ExecutionState s = initial_state(ctx, JobConfig{1, 64, 4}, nodes);
  const json j = to_json(apply_failures(ctx, s, {NodeId(0)}));
  EXPECT_EQ(j["outcome"], "reconfigured");
  EXPECT_FALSE(j["actions"].empty());
  EXPECT_TRUE(j["actions"][0].contains("action"));
  EXPECT_TRUE(j.contains("copy_plan"));
  EXPECT_GT(j["downtime_ms"].get<double>(), 0.0);
}

}  // namespace
}  // namespace resilplan
