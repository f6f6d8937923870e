// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "snn/error.hpp"
#include "snn/model.hpp"
#include "test_util.hpp"

namespace snn {
namespace {

using test::random_tensor;

ModelSpec tiny_spec(int partitions, int alpha = 1) {
  ModelSpec s;
  s.stages = 2;
  s.blocks_per_stage = 2;
  s.cardinality = 4;
  s.bottleneck_width = 2;
  s.partitions = partitions;
  s.alpha = alpha;
  s.num_classes = 5;
  s.in_height = 8;
  s.in_width = 8;
  s.stem_channels = 4;
  s.base_width = 4;
  return s;
}

SepGraph make(const ModelSpec& s, std::uint64_t seed) {
  SepGraph g = s.partitions == 1 ? build_resnext(s) : build_sep_resnext(s);
  Rng rng(seed);
  g.init(rng);
  return g;
}

// Perturb batchnorm affine parameters so that equivalence checks are not
// trivially satisfied by the identity initialisation.
void jitter_affine(SepGraph& g, Rng& rng) {
  g.visit([&](const std::string& name, Param& p) {
    if (name.find("bn") == std::string::npos) return;
    for (auto& v : p.value.data()) v += 0.2f * (rng.uniform_float() - 0.5f);
  });
}

void warm_statistics(SepGraph& g, Rng& rng) {
  const ModelSpec& s = g.spec();
  g.forward(random_tensor({4, s.in_channels, s.in_height, s.in_width}, rng), nullptr, Mode::kTrain);
}

TEST(Spec, DepthToBlocks) {
  EXPECT_EQ(ModelSpec::resnext(56, 8, 16).total_blocks(), 18);
  const auto deep = ModelSpec::resnext(110, 8, 16, 4, 2);
  EXPECT_EQ(deep.total_blocks(), 36);
  EXPECT_EQ(deep.transmission_points(), 18);
  EXPECT_EQ(ModelSpec::resnext(56, 8, 16, 4, 2).transmission_points(), 9);
  EXPECT_THROW(ModelSpec::resnext(57, 8, 16), ConfigError);
}

TEST(Spec, Validation) {
  auto s = tiny_spec(3);
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(build_sep_resnext(s), ConfigError);
  EXPECT_THROW(build_resnext(tiny_spec(2)), ConfigError);
  EXPECT_THROW(build_sep_resnext(tiny_spec(1)), ConfigError);
}

TEST(Build, SingleBlockForwardShape) {
  ModelSpec s = tiny_spec(1);
  s.stages = 1;
  s.blocks_per_stage = 1;
  SepGraph g = make(s, 1);
  Rng rng(2);
  const Tensor4 y = g.forward(random_tensor({2, 3, 8, 8}, rng), nullptr, Mode::kTrain);
  EXPECT_EQ(y.shape(), (Shape4{2, 5, 1, 1}));
  EXPECT_TRUE(y.all_finite());
}

TEST(Build, StagesHalveSpatialSize) {
  const auto geo = block_geometry(ModelSpec::resnext(56, 8, 16, 4, 2));
  ASSERT_EQ(geo.size(), 18u);
  for (const auto& b : geo) {
    const int expected = 32 >> b.stage;
    EXPECT_EQ(b.output.h, expected);
    EXPECT_EQ(b.output.w, expected);
    EXPECT_EQ(b.stride, (b.stage > 0 && b.index % 6 == 0) ? 2 : 1);
  }
}

TEST(Build, SeparableBlockLayout) {
  const SepGraph g = build_sep_resnext(ModelSpec::resnext(56, 8, 16, 4, 2));
  const auto& b = g.blocks()[0];
  // first stage: [1x1 groups 4; 3x3 groups 8; 1x1 groups 4], 4x the plain widths
  EXPECT_EQ(b.conv1().groups(), 4);
  EXPECT_EQ(b.conv2().groups(), 8);
  EXPECT_EQ(b.conv3().groups(), 4);
  EXPECT_EQ(b.conv1().in_channels(), 4 * 16);
  // the grouped 3x3 keeps the plain inner width; only the outer 1x1 widths grow
  EXPECT_EQ(b.conv2().in_channels(), 128);
  EXPECT_EQ(b.conv3().out_channels(), 4 * 64);
  EXPECT_EQ(g.head_channels(), 256);
  EXPECT_EQ(g.head().in_features(), 256);
}

TEST(Build, PlainWidthsFollowStages) {
  const SepGraph g = build_resnext(ModelSpec::resnext(56, 8, 16));
  EXPECT_EQ(g.blocks()[0].conv2().in_channels(), 128);
  EXPECT_EQ(g.blocks()[6].conv2().in_channels(), 256);
  EXPECT_EQ(g.blocks()[12].conv2().in_channels(), 512);
  EXPECT_EQ(g.blocks()[17].conv3().out_channels(), 256);
}

TEST(Build, ClassifierReadsFirstPartitionOnly) {
  SepGraph g = make(tiny_spec(2), 3);
  Rng rng(4);
  warm_statistics(g, rng);
  const Tensor4 x = random_tensor({1, 3, 8, 8}, rng);
  const Tensor4 logits = g.infer(x, nullptr);

  // run the body by hand and apply the head to a manual slice
  Tensor4 h = g.stem_conv().infer(x);
  h = relu(g.stem_bn().infer(h));
  const std::vector<Tensor4> copies{h, h};
  h = concat_channels(copies);
  for (const auto& b : g.blocks()) h = b.infer(h);
  const int half = h.c() / 2;
  const Tensor4 manual = g.head().infer(global_avg_pool(h.slice_channels(0, half)));
  EXPECT_EQ(manual, logits);

  // changing the second half has no effect on the classifier
  Tensor4 h2 = h;
  for (int c = half; c < h2.c(); ++c)
    for (int i = 0; i < h2.h() * h2.w(); ++i) h2.plane(0, c)[i] += 10.0f;
  EXPECT_EQ(g.head().infer(global_avg_pool(h2.slice_channels(0, half))), logits);
}

TEST(Build, AllSelfEqualsPartitionByPartition) {
  for (int parts : {2, 4}) {
    ModelSpec s = tiny_spec(parts, 2);
    s.cardinality = 4;
    SepGraph g = make(s, 5);
    Rng rng(6);
    jitter_affine(g, rng);
    warm_statistics(g, rng);
    const Tensor4 x = random_tensor({1, 3, 8, 8}, rng);
    const auto self = PolicySequence::all_self(parts, 2, g.transmission_count());
    const Tensor4 fused = g.infer(x, &self);
    EXPECT_EQ(fused, g.infer(x, nullptr));

    const Tensor4 stem = relu(g.stem_bn().infer(g.stem_conv().infer(x)));
    std::vector<Tensor4> outs;
    for (int p = 0; p < parts; ++p) {
      Tensor4 h = stem;
      for (const auto& b : g.blocks()) h = b.slice_partition(p, parts).infer(h);
      outs.push_back(h);
    }
    EXPECT_EQ(g.head().infer(global_avg_pool(outs[0])), fused) << "G=" << parts;
  }
}

TEST(Build, SinglePartitionSepMatchesPlain) {
  // a G=1 graph has the same structure whatever builder produced it
  const ModelSpec s = tiny_spec(1);
  SepGraph a = make(s, 11);
  SepGraph b(s);
  Rng rng(11);
  b.init(rng);
  Rng data(12);
  const Tensor4 x = random_tensor({2, 3, 8, 8}, data);
  EXPECT_EQ(a.forward(x, nullptr, Mode::kTrain), b.forward(x, nullptr, Mode::kTrain));
}

TEST(Build, Determinism) {
  const ModelSpec s = tiny_spec(2);
  SepGraph a = make(s, 9), b = make(s, 9);
  Rng r1(1), r2(1);
  const auto p = PolicySequence::uniform(2, 1, a.transmission_count(), 1, 3);
  const Tensor4 x = random_tensor({2, 3, 8, 8}, r1);
  const Tensor4 x2 = random_tensor({2, 3, 8, 8}, r2);
  EXPECT_EQ(a.forward(x, &p, Mode::kTrain), b.forward(x2, &p, Mode::kTrain));
}

TEST(Build, CommunicationChangesOutput) {
  SepGraph g = make(tiny_spec(2), 13);
  Rng rng(14);
  warm_statistics(g, rng);
  const Tensor4 x = random_tensor({1, 3, 8, 8}, rng);
  const auto swap = PolicySequence::uniform(2, 1, g.transmission_count(), 1);
  EXPECT_NE(g.infer(x, &swap), g.infer(x, nullptr));
}

TEST(Build, WrongPolicyLengthRejected) {
  SepGraph g = make(tiny_spec(2), 13);
  const auto bad = PolicySequence::uniform(2, 1, g.transmission_count() + 1, 1);
  Rng rng(1);
  EXPECT_THROW(g.forward(random_tensor({1, 3, 8, 8}, rng), &bad, Mode::kTrain), ConfigError);
  EXPECT_THROW(g.backward(Tensor4({1, 5, 1, 1})), StateError);
}

// Oracle: chunks routed by hand, element by element.
TEST(Routing, MatchesManualCopy) {
  Rng rng(21);
  const int parts = 4, per = 6, keep = 4;
  const Tensor4 x = random_tensor({2, parts * per, 3, 3}, rng);
  const CommDecision d{{2, 0, 3, 1}};
  const Tensor4 r = route_chunks(x, d, keep, parts, false);
  ASSERT_EQ(r.shape(), x.shape());
  for (int n = 0; n < 2; ++n)
    for (int src = 0; src < parts; ++src)
      for (int c = 0; c < per; ++c)
        for (int i = 0; i < 9; ++i) {
          const float got = r.plane(n, d.dest[src] * per + c)[i];
          const float want = c < keep ? x.plane(n, src * per + c)[i] : 0.0f;
          EXPECT_EQ(got, want);
        }
}

TEST(Routing, SelfSendIsSilent) {
  Rng rng(22);
  const Tensor4 x = random_tensor({1, 8, 2, 2}, rng);
  const Tensor4 r = route_chunks(x, CommDecision{{0, 3, 2, 1}}, 2, 4, false);
  for (int c : {0, 1, 4, 5})
    for (int i = 0; i < 4; ++i) EXPECT_EQ(r.plane(0, c)[i], 0.0f);
  EXPECT_EQ(r.plane(0, 6)[0], x.plane(0, 2)[0]);
}

TEST(Routing, AdaptChunkPoolsAndPads) {
  Tensor4 sent({1, 4, 4, 4});
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 16; ++i) sent.plane(0, c)[i] = static_cast<float>(c * 100 + i);
  const Tensor4 a = adapt_chunk(sent, {1, 8, 2, 2}, 2);
  ASSERT_EQ(a.shape(), (Shape4{1, 8, 2, 2}));
  // partition 1 channel 0 is source channel 2; top-left 2x2 window = {0,1,4,5}
  EXPECT_FLOAT_EQ(a.plane(0, 4)[0], 200.0f + 2.5f);
  EXPECT_FLOAT_EQ(a.plane(0, 0)[3], (10 + 11 + 14 + 15) / 4.0f);
  for (int c : {2, 3, 6, 7}) EXPECT_EQ(a.plane(0, c)[1], 0.0f);
  EXPECT_EQ(adapt_chunk(sent, sent.shape(), 2), sent);
}

TEST(Routing, HalfPrecisionWireRounds) {
  Tensor4 x({1, 2, 1, 1});
  x.plane(0, 0)[0] = 1.0f + 1.0f / 4096.0f;  // not representable in f16
  const Tensor4 r = route_chunks(x, CommDecision{{1, 0}}, 1, 2, true);
  EXPECT_EQ(r.plane(0, 1)[0], 1.0f);
  EXPECT_EQ(route_chunks(x, CommDecision{{1, 0}}, 1, 2, false).plane(0, 1)[0], x.plane(0, 0)[0]);
}

// Central differences over the whole separable graph, with a communicating
// policy crossing a stage boundary and a partial sparsity level. Elements
// that straddle a ReLU kink are excluded; f32 cannot resolve them.
TEST(Gradients, GraphMatchesFiniteDifferences) {
  ModelSpec s = tiny_spec(2, 1);
  s.in_height = 4;
  s.in_width = 4;
  s.num_classes = 3;
  SepGraph g = make(s, 31);
  Rng rng(32);
  const Tensor4 x = random_tensor({3, 3, 4, 4}, rng);
  const std::vector<int> labels{0, 2, 1};
  PolicySequence p{2, 1, 3, 50, {{1, 1}, {1, 0}, {0, 2}, {1, 2}}};

  auto loss = [&]() {
    return static_cast<double>(softmax_cross_entropy(g.forward(x, &p, Mode::kTrain), labels).loss);
  };
  g.zero_grad();
  const auto ce = softmax_cross_entropy(g.forward(x, &p, Mode::kTrain), labels);
  g.backward(ce.grad);

  std::vector<std::pair<std::string, Param*>> all;
  g.visit([&](const std::string& n, Param& prm) { all.emplace_back(n, &prm); });
  ASSERT_FALSE(all.empty());
  test::KinkAwareComparison sum;
  for (auto& [name, prm] : all) {
    const auto r = test::compare_smooth(prm->value.data(), test::to_double(prm->grad.data()), loss);
    EXPECT_LE(r.disagree, 1 + r.agree / 200) << name;
    sum.agree += r.agree;
    sum.disagree += r.disagree;
    sum.kinked += r.kinked;
  }
  const double total = static_cast<double>(sum.agree + sum.disagree + sum.kinked);
  EXPECT_LE(static_cast<double>(sum.disagree), 0.005 * total);
  EXPECT_LE(static_cast<double>(sum.kinked), 0.15 * total);
}

TEST(Gradients, BackwardThroughHalfWireIsPassThrough) {
  ModelSpec s = tiny_spec(2, 1);
  s.in_height = 4;
  s.in_width = 4;
  SepGraph a = make(s, 41), b = make(s, 41);
  Rng rng(42);
  const Tensor4 x = random_tensor({2, 3, 4, 4}, rng);
  const std::vector<int> labels{1, 3};
  const auto p = PolicySequence::uniform(2, 1, a.transmission_count(), 1);
  const auto ga = softmax_cross_entropy(a.forward(x, &p, Mode::kTrain, {true}), labels);
  const auto gb = softmax_cross_entropy(b.forward(x, &p, Mode::kTrain, {false}), labels);
  a.backward(ga.grad);
  b.backward(gb.grad);
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_LT(test::relative_error(test::to_double(pa[i]->grad.data()), test::to_double(pb[i]->grad.data())), 1e-2);
  }
}

TEST(Counting, SingleConv) {
  EXPECT_EQ(Conv2d(4, 2, 1, 1, 1).num_params(), 8u);
}

TEST(Counting, ClosedFormExamples) {
  EXPECT_EQ(count_params_formula({BlockFormula::Kind::kPlain, 4, 0, 2, 1, 1, 1, 3}), 52);
  EXPECT_EQ(count_params_formula({BlockFormula::Kind::kResNeXt, 64, 0, 0, 2, 4, 1, 3}), 1312);
  for (int c : {4, 8, 12, 32})
    for (int g = 1; g <= c; ++g) {
      if (c % g) continue;
      EXPECT_EQ(count_params_formula({BlockFormula::Kind::kSeparable, 64, 0, 0, c, 4, g, 3}),
                count_params_formula({BlockFormula::Kind::kResNeXt, 64, 0, 0, c, 4, 1, 3}));
    }
  EXPECT_THROW(count_params_formula({BlockFormula::Kind::kSeparable, 64, 0, 0, 6, 4, 4, 3}), ConfigError);
}

TEST(Counting, FormulaEqualsEnumerationOnRandomSpecs) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    ModelSpec s;
    s.stages = 1 + static_cast<int>(rng.below(3));
    s.blocks_per_stage = 1 + static_cast<int>(rng.below(2));
    const int g = 1 << rng.below(3);
    s.partitions = g;
    s.cardinality = g * (1 + static_cast<int>(rng.below(3)));
    s.bottleneck_width = 1 + static_cast<int>(rng.below(4));
    s.kernel = rng.below(2) ? 3 : 1;
    s.base_width = 1 + static_cast<int>(rng.below(8));
    s.stem_channels = 1 + static_cast<int>(rng.below(8));
    s.in_height = s.in_width = 8;
    s.num_classes = 2;
    const SepGraph graph(s);
    std::int64_t formula = 0;
    for (const auto& b : graph.geometry()) {
      formula += count_params_formula({g == 1 ? BlockFormula::Kind::kResNeXt : BlockFormula::Kind::kSeparable,
                                       b.in_per_partition, b.out_per_partition, 0, s.cardinality, b.stage_width, g,
                                       s.kernel});
    }
    EXPECT_EQ(static_cast<std::int64_t>(count_block_conv_weights(graph)), formula) << to_string(s);
  }
}

TEST(Counting, TableTotalsAndOverheadBand) {
  SepGraph plain = build_resnext(ModelSpec::resnext(56, 8, 16));
  SepGraph sep = build_sep_resnext(ModelSpec::resnext(56, 8, 16, 4, 2));
  const double p = static_cast<double>(count_params_enumerated(plain));
  const double q = static_cast<double>(count_params_enumerated(sep));
  EXPECT_NEAR(p / 4.39e6, 1.0, 0.05);
  EXPECT_NEAR(q / 4.54e6, 1.0, 0.05);
  EXPECT_GE(q / p - 1.0, 0.0);
  EXPECT_LE(q / p - 1.0, 0.08);
}

TEST(Counting, PartitionsCoverEveryParameter) {
  SepGraph g = make(tiny_spec(4, 2), 1);
  const auto parts = partition_param_counts(g);
  ASSERT_EQ(parts.size(), 5u);
  std::size_t total = 0;
  for (auto v : parts) total += v;
  EXPECT_EQ(total, count_params_enumerated(g));
  for (int p = 1; p < 4; ++p) EXPECT_EQ(parts[p], parts[0]);
}

TEST(Flops, ConvMacs) {
  EXPECT_EQ(Conv2d(2, 2, 1, 1, 1).macs({1, 2, 2, 2}), 16u);
  EXPECT_EQ(Conv2d(8, 8, 3, 1, 4).macs({1, 8, 6, 6}) * 4, Conv2d(8, 8, 3, 1, 1).macs({1, 8, 6, 6}));
}

TEST(Flops, PerPartitionShare) {
  const SepGraph g = build_sep_resnext(ModelSpec::resnext(56, 8, 16, 4, 2));
  const FlopReport r = count_flops(g);
  EXPECT_EQ(r.total_flops(), 2 * r.total_macs);
  EXPECT_EQ(r.total_macs, r.stem_macs + r.head_macs + r.block_body_macs());
  // enumeration oracle: sum the sliced blocks of one partition
  std::uint64_t part0 = r.stem_macs + r.head_macs;
  for (std::size_t b = 0; b < g.blocks().size(); ++b) {
    Shape4 in = g.geometry()[b].input;
    in.c /= 4;
    part0 += g.blocks()[b].slice_partition(0, 4).macs(in);
  }
  EXPECT_EQ(r.partition_macs(0), part0);
  const double share = static_cast<double>(r.partition_macs(0)) / (static_cast<double>(r.total_macs) / 4.0);
  EXPECT_NEAR(share, 1.0, 0.05);
}

}  // namespace
}  // namespace snn

namespace snn {
namespace {

// Exact adjoint oracle for the linear chunk operators: <A x, r> == <x, A^T r>.
TEST(Routing, BackwardIsTheAdjoint) {
  Rng rng(51);
  const int parts = 4;
  for (int trial = 0; trial < 20; ++trial) {
    const CommDecision d = decode_decision(parts, rng.below(24));
    const int per = 3 + static_cast<int>(rng.below(4));
    const int keep = 1 + static_cast<int>(rng.below(per));
    const Tensor4 x = random_tensor({2, parts * per, 3, 3}, rng);
    const Tensor4 r = random_tensor(x.shape(), rng);
    const double lhs = test::dot(r, route_chunks(x, d, keep, parts, false));
    const double rhs = test::dot(x, route_chunks_backward(r, d, keep, parts));
    EXPECT_NEAR(lhs, rhs, 1e-9 * (1.0 + std::abs(lhs)));
  }
}

TEST(Routing, AdaptBackwardIsTheAdjoint) {
  Rng rng(52);
  const Shape4 sent{2, 8, 8, 8};
  for (const Shape4 target : {Shape4{2, 8, 8, 8}, Shape4{2, 16, 4, 4}, Shape4{2, 32, 2, 2}}) {
    const Tensor4 x = random_tensor(sent, rng);
    const Tensor4 r = random_tensor(target, rng);
    const double lhs = test::dot(r, adapt_chunk(x, target, 2));
    const double rhs = test::dot(x, adapt_chunk_backward(r, sent, 2));
    EXPECT_NEAR(lhs, rhs, 1e-5 * (1.0 + std::abs(lhs)));
  }
}

}  // namespace
}  // namespace snn
