// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "snn/error.hpp"
#include "snn/perf_model.hpp"
#include "snn/rng.hpp"

namespace snn {
namespace {

ModelSpec four_way(int alpha = 2) { return ModelSpec::resnext(56, 4, 16, 4, alpha); }

PolicySequence random_policy(const ModelSpec& spec, int levels, Rng& rng) {
  PolicySequence p{spec.partitions, spec.alpha, levels, 50, {}};
  const auto ids = factorial(spec.partitions);
  for (int t = 0; t < spec.transmission_points(); ++t)
    p.steps.push_back({static_cast<int>(rng.below(ids)), static_cast<int>(rng.below(levels))});
  return p;
}

TEST(CommVolume, MessageBytesFromGeometry) {
  ModelSpec s = ModelSpec::resnext(56, 4, 16, 4, 1);
  s.in_height = s.in_width = 8;
  const auto p = PolicySequence::uniform(4, 1, 18, 9);
  const CostReport f32 = comm_volume(s, &p, WireDtype::kF32);
  EXPECT_EQ(f32.steps[0].message_bytes, 64u * 8 * 8 * 4);
  EXPECT_EQ(f32.steps[0].message_bytes, 16384u);
  EXPECT_EQ(comm_volume(s, &p, WireDtype::kF16).steps[0].message_bytes, 8192u);
}

TEST(CommVolume, AllSelfMovesNothing) {
  const ModelSpec s = four_way();
  const auto p = PolicySequence::all_self(4, 2, 9);
  const CostReport r = comm_volume(s, &p, WireDtype::kF32);
  EXPECT_EQ(r.payload_bytes, 0u);
  EXPECT_EQ(r.messages, 0u);
  // only the flagged input broadcast remains
  EXPECT_EQ(r.total_bytes, 4u * 3 * 32 * 32 * 4);
}

TEST(CommVolume, AlphaTwoHalvesMessageCount) {
  // decision 9 is a derangement, so every node sends at every step
  const auto a1 = PolicySequence::uniform(4, 1, 18, 9);
  const auto a2 = PolicySequence::uniform(4, 2, 9, 9);
  const auto r1 = comm_volume(four_way(1), &a1, WireDtype::kF32);
  const auto r2 = comm_volume(four_way(2), &a2, WireDtype::kF32);
  EXPECT_EQ(r1.messages, 72u);
  EXPECT_EQ(r2.messages * 2, r1.messages);
}

TEST(Baseline, RingAllReduceFactors) {
  EXPECT_DOUBLE_EQ(ring_allreduce_per_node(1000.0, 2), 1000.0);
  EXPECT_DOUBLE_EQ(ring_allreduce_per_node(1000.0, 4), 1500.0);
  EXPECT_DOUBLE_EQ(ring_allreduce_per_node(1000.0, 1), 0.0);
}

TEST(Baseline, HandCountedPlainModel) {
  // six blocks per stage: 64x32x32, 128x16x16, 256x8x8 f32 maps; the
  // cluster moves 2(G-1) maps per block
  const std::uint64_t maps = 6 * (64 * 32 * 32 + 128 * 16 * 16 + 256 * 8 * 8) * 4ull;
  EXPECT_EQ(baseline_allreduce_volume(plain_counterpart(four_way()), 4), 6 * maps);
  EXPECT_EQ(comm_volume(four_way(), nullptr, WireDtype::kF32).baseline_bytes, 6 * maps);
  EXPECT_THROW(baseline_allreduce_volume(four_way(), 4), ConfigError);
}

TEST(CommVolume, PublishedPoliciesStayUnderBounds) {
  const auto ps = published_policies();
  const ModelSpec s = four_way();
  EXPECT_LE(comm_volume(s, &ps[0], WireDtype::kF32).ratio, 0.35);
  EXPECT_LE(comm_volume(s, &ps[1], WireDtype::kF32).ratio, 0.35);
  EXPECT_LE(comm_volume(s, &ps[2], WireDtype::kF16).ratio, 0.20);
}

TEST(CommVolume, HalfPrecisionHalvesPayload) {
  Rng rng(5);
  const ModelSpec s = four_way();
  for (int i = 0; i < 50; ++i) {
    const auto p = random_policy(s, 9, rng);
    EXPECT_EQ(comm_volume(s, &p, WireDtype::kF16).payload_bytes * 2, comm_volume(s, &p, WireDtype::kF32).payload_bytes);
  }
}

TEST(CommVolume, MonotoneInSparsityLevel) {
  Rng rng(6);
  const ModelSpec s = four_way();
  for (int i = 0; i < 50; ++i) {
    auto p = random_policy(s, 9, rng);
    const std::size_t t = rng.below(p.size());
    std::uint64_t prev = 0;
    for (int level = 0; level < 9; ++level) {
      p.steps[t].sparsity_id = level;
      const auto bytes = comm_volume(s, &p, WireDtype::kF32).payload_bytes;
      EXPECT_GE(bytes, prev);
      prev = bytes;
    }
  }
}

TEST(CommVolume, NodeBytesSumToPayload) {
  Rng rng(7);
  const ModelSpec s = four_way();
  for (int i = 0; i < 30; ++i) {
    const auto p = random_policy(s, 9, rng);
    const auto r = comm_volume(s, &p, WireDtype::kF32);
    std::uint64_t sum = 0;
    for (auto b : r.node_bytes) sum += b;
    EXPECT_EQ(sum, r.payload_bytes);
  }
}

TEST(CommVolume, RejectsMismatchedPolicy) {
  const auto p = PolicySequence::uniform(4, 1, 18, 9);
  EXPECT_THROW(comm_volume(four_way(2), &p, WireDtype::kF32), ConfigError);
  const auto q = PolicySequence::uniform(2, 2, 9, 1);
  EXPECT_THROW(comm_volume(four_way(2), &q, WireDtype::kF32), ConfigError);
}

TEST(Table6, PublishedRowsAndCustomPolicy) {
  const auto rows = table6(four_way(), nullptr);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_DOUBLE_EQ(rows[0].ratio, 1.0);
  EXPECT_GT(rows[1].bytes, rows[2].bytes);
  EXPECT_GT(rows[2].bytes, rows[3].bytes);
  EXPECT_NE(table6_text(rows).find("f16"), std::string::npos);
  const auto p = published_policies()[1];
  const auto custom = table6(four_way(), &p, WireDtype::kF16);
  EXPECT_GE(custom[1].bytes, custom[2].bytes);
  EXPECT_EQ(custom[2].bytes - custom[3].bytes, comm_volume(four_way(), &p, WireDtype::kF16).payload_bytes);
}

TEST(Feasibility, LimitsOfBandwidthAndCompute) {
  const auto p = published_policies()[0];
  ClusterSpec fast_net;
  fast_net.bandwidth_bps = 1e30;
  EXPECT_NEAR(feasibility(fast_net, four_way(), &p).margin, 1.0, 1e-12);
  ClusterSpec fast_cpu;
  fast_cpu.flops_per_sec = 1e30;
  EXPECT_FALSE(feasibility(fast_cpu, four_way(), &p).feasible);
}

TEST(Feasibility, PublishedPoliciesFitTheReferenceCluster) {
  const ClusterSpec c;  // 1.7e8 FLOP/s, 300 Mbit/s
  const auto ps = published_policies();
  EXPECT_TRUE(feasibility(c, four_way(), &ps[0]).feasible);
  EXPECT_TRUE(feasibility(c, four_way(), &ps[1]).feasible);
  EXPECT_TRUE(feasibility(c, four_way(), &ps[2], WireDtype::kF16).feasible);
}

TEST(Simulate, ZeroExposedWaitExactlyWhenFeasible) {
  Rng rng(8);
  const ModelSpec s = four_way();
  int feasible = 0, infeasible = 0;
  for (int i = 0; i < 60; ++i) {
    const auto p = random_policy(s, 9, rng);
    ClusterSpec c;
    c.flops_per_sec = std::pow(10.0, 7.0 + 3.0 * rng.uniform());
    c.bandwidth_bps = std::pow(10.0, 6.0 + 3.0 * rng.uniform());
    c.message_overhead_s = rng.below(2) ? 1e-4 * rng.uniform() : 0.0;
    const auto f = feasibility(c, s, &p);
    if (std::abs(f.margin) < 1e-9) continue;
    const auto t = simulate_latency(c, s, &p);
    if (f.feasible) {
      ++feasible;
      EXPECT_LE(t.exposed_wait_s, 1e-12 * t.makespan);
    } else {
      ++infeasible;
      EXPECT_GT(t.exposed_wait_s, 0.0);
    }
  }
  EXPECT_GT(feasible, 0);
  EXPECT_GT(infeasible, 0);
}

TEST(Simulate, SpeedupOnReferenceCluster) {
  const ClusterSpec c;
  for (const auto& p : published_policies()) {
    const auto t = simulate_latency(c, four_way(), &p);
    EXPECT_GE(t.speedup, 2.5);
    EXPECT_LE(t.speedup, 4.0);
  }
}

TEST(Simulate, MonotoneInBandwidthAndCompute) {
  const auto p = published_policies()[1];
  double prev = std::numeric_limits<double>::infinity();
  for (double b : {1e6, 1e7, 1e8, 1e9, 1e10}) {
    ClusterSpec c;
    c.bandwidth_bps = b;
    const double m = simulate_latency(c, four_way(), &p).makespan;
    EXPECT_LE(m, prev);
    prev = m;
  }
  prev = std::numeric_limits<double>::infinity();
  for (double r : {1e6, 1e7, 1e8, 1e9, 1e10}) {
    ClusterSpec c;
    c.flops_per_sec = r;
    const double m = simulate_latency(c, four_way(), &p).makespan;
    EXPECT_LE(m, prev);
    prev = m;
  }
}

TEST(Simulate, SingleNodeIsFlopsOverRate) {
  const ModelSpec s = ModelSpec::resnext(29, 4, 16, 1, 1);
  ClusterSpec c;
  c.nodes = 1;
  c.bandwidth_bps = 1e300;  // input transfer vanishes
  const auto t = simulate_latency(c, s, nullptr);
  const double flops = static_cast<double>(count_flops(SepGraph(s)).total_flops());
  EXPECT_NEAR(t.makespan, flops / c.flops_per_sec, 1e-9 * t.makespan);
  EXPECT_NEAR(t.speedup, 1.0, 1e-12);
}

TEST(Simulate, SegmentsDoNotOverlap) {
  Rng rng(10);
  const ModelSpec s = four_way();
  ClusterSpec c;
  c.bandwidth_bps = 2e6;  // force contention and waits
  const auto p = random_policy(s, 9, rng);
  const auto t = simulate_latency(c, s, &p);
  std::map<std::string, std::vector<std::pair<double, double>>> lanes;
  for (const auto& seg : t.segments) {
    EXPECT_LE(seg.start, seg.end);
    const std::string lane = seg.kind == Segment::Kind::kTransmit
                                 ? std::to_string(seg.node) + seg.label.substr(seg.label.find("->"))
                                 : "node" + std::to_string(seg.node);
    lanes[lane].push_back({seg.start, seg.end});
  }
  for (auto& [name, iv] : lanes) {
    std::sort(iv.begin(), iv.end());
    for (std::size_t i = 1; i < iv.size(); ++i) EXPECT_LE(iv[i - 1].second, iv[i].first + 1e-12) << name;
  }
  EXPECT_GT(t.exposed_wait_s, 0.0);
  EXPECT_NE(t.to_json().find("\"segments\""), std::string::npos);
}

}  // namespace
}  // namespace snn
