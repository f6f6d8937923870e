// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "snn/error.hpp"
#include "snn/layers.hpp"
#include "snn/search.hpp"

namespace snn {
namespace {

DatasetHandle tiny_data(std::uint64_t seed = 1) {
  DatasetConfig d;
  d.classes = 4;
  d.size = 8;
  d.train_images = 300;
  d.test_images = 40;
  d.noise = 0.2;
  d.seed = seed;
  return make_synthetic(d);
}

SearchConfig tiny_config() {
  SearchConfig c;
  c.model.stages = 2;
  c.model.blocks_per_stage = 1;
  c.model.cardinality = 4;
  c.model.bottleneck_width = 1;
  c.model.partitions = 2;
  c.model.alpha = 1;
  c.model.num_classes = 4;
  c.model.in_height = c.model.in_width = 8;
  c.model.stem_channels = 4;
  c.model.base_width = 4;
  c.levels = 3;
  c.meta_iterations = 3;
  c.shared_steps_per_iter = 5;
  c.controller_steps_per_iter = 4;
  c.candidates = 3;
  c.warmup_steps = 5;
  c.controller_hidden = 8;
  c.fine_tune_epochs = 1;
  c.batch_size = 8;
  c.reward_batch = 8;
  return c;
}

SepGraph fresh_graph(const SearchConfig& c, std::uint64_t seed = 1) {
  SepGraph g(c.model);
  Rng rng(seed);
  g.init(rng);
  return g;
}

TEST(SharedWeights, ZeroStepsLeaveGraphUnchanged) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  SepGraph g = fresh_graph(cfg);
  const auto before = graph_hash(g);
  Rng rng(1);
  train_shared_weights(g, uniform_sampler(2, 1, 3, 50, 2), data.train, 0, 8, 1, 0.1, rng);
  EXPECT_EQ(graph_hash(g), before);
}

TEST(SharedWeights, PointMassSamplerEqualsFixedArchitectureTraining) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const PolicySequence fixed{2, 1, 3, 50, {{1, 0}, {1, 2}}};
  SepGraph a = fresh_graph(cfg), b = fresh_graph(cfg);
  Rng ra(5), rb(5);
  train_shared_weights(a, [&](Rng&) { return fixed; }, data.train, 10, 8, 1, 0.05, ra);
  // the same mini-batches, trained directly under the fixed policy
  std::vector<int> idx(8), labels;
  for (int s = 0; s < 10; ++s) {
    for (auto& i : idx) i = static_cast<int>(rb.below(static_cast<std::uint64_t>(data.train.count())));
    const Tensor4 x = data.train.batch(idx, &labels);
    b.zero_grad();
    b.backward(softmax_cross_entropy(b.forward(x, &fixed, Mode::kTrain), labels).grad);
    sgd_step(b.params(), 0.05f);
  }
  EXPECT_EQ(graph_hash(a), graph_hash(b));
}

TEST(SharedWeights, SingleSampleTrainingLearnsToyTask) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  SepGraph g = fresh_graph(cfg);
  Rng rng(2);
  const auto sampler = uniform_sampler(2, 1, 3, 50, 2);
  const double first = train_shared_weights(g, sampler, data.train, 20, 16, 1, 0.1, rng);
  train_shared_weights(g, sampler, data.train, 160, 16, 1, 0.1, rng);
  const double last = train_shared_weights(g, sampler, data.train, 20, 16, 1, 0.1, rng);
  EXPECT_TRUE(std::isfinite(last));
  EXPECT_LT(last, first);
}

TEST(SharedWeights, MonteCarloAveragesGradients) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  SepGraph g = fresh_graph(cfg);
  Rng rng(3);
  const double loss = train_shared_weights(g, uniform_sampler(2, 1, 3, 50, 2), data.train, 3, 8, 4, 0.05, rng);
  EXPECT_TRUE(std::isfinite(loss));
  for (Param* p : g.params()) ASSERT_TRUE(p->value.all_finite());
}

double kl(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q) {
  double total = 0.0;
  for (std::size_t s = 0; s < p.size(); ++s)
    for (std::size_t i = 0; i < p[s].size(); ++i) total += p[s][i] * std::log(p[s][i] / q[s][i]);
  return total;
}

TEST(ControllerStage, ConstantRewardLeavesDistributionUnchanged) {
  ControllerConfig cc{4, 1, 50, 2, 16};
  Rng init(1);
  Controller ctl(cc, init);
  const auto probe = PolicySequence::uniform(4, 2, 2, 9);
  const auto before = ctl.distributions(probe);
  ControllerState st;
  Rng rng(2);
  train_controller(ctl, [](const PolicySequence&) { return 0.5; }, 2, 100, 1, 0.1, 0.95, st, rng);
  EXPECT_LT(kl(before, ctl.distributions(probe)), 0.01);
}

TEST(ControllerStage, DerangementRewardIsLearned) {
  ControllerConfig cc{4, 1, 50, 2, 100};
  Rng init(1);
  Controller ctl(cc, init);
  const RewardFn reward = [](const PolicySequence& p) {
    double r = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) r += is_comm_intensive(p.decision(t)) ? 0.5 : 0.0;
    return r;
  };
  ControllerState st;
  Rng rng(3);
  train_controller(ctl, reward, 2, 300, 1, 0.3, 0.9, st, rng);
  int hits = 0, total = 0;
  Rng eval(4);
  for (int i = 0; i < 1000; ++i) {
    const auto p = ctl.sample(2, eval).first;
    for (std::size_t t = 0; t < 2; ++t, ++total) hits += is_comm_intensive(p.decision(t));
  }
  EXPECT_GT(static_cast<double>(hits) / total, 0.8);
}

TEST(ControllerStage, DeterministicUnderSeedAndGraphUntouched) {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  SepGraph g = fresh_graph(cfg);
  Rng warm(1);
  train_shared_weights(g, uniform_sampler(2, 1, 3, 50, 2), data.train, 3, 8, 1, 0.05, warm);
  const auto h = graph_hash(g);
  ControllerParams trained[2];
  for (int k = 0; k < 2; ++k) {
    Rng init(7), rng(8);
    Controller ctl(cfg.controller_config(), init);
    ControllerState st;
    const double r = train_controller(ctl, g, data.validation, cfg, st, rng);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    trained[k] = ctl.params();
  }
  EXPECT_TRUE(trained[0] == trained[1]);
  EXPECT_EQ(graph_hash(g), h);
  Controller ctl(cfg.controller_config(), warm);
  ControllerState st;
  Split empty;
  EXPECT_THROW(train_controller(ctl, g, empty, cfg, st, warm), ConfigError);
}

TEST(SampleBest, SingleCandidateIsReturned) {
  const auto cfg = tiny_config();
  Rng a(1), b(1);
  const auto sampler = uniform_sampler(2, 1, 3, 50, 2);
  const Candidate c = sample_best(sampler, [](const PolicySequence&) { return 0.3; }, cfg.model, 1, a);
  EXPECT_EQ(c.policy, sampler(b));
  EXPECT_EQ(c.accuracy, 0.3);
}

TEST(SampleBest, TiesPreferFewerBytesThenEarlierIndex) {
  const auto cfg = tiny_config();
  // candidates in order: sends whole, keeps everything, sends whole again
  const std::vector<PolicySequence> seq{{2, 1, 3, 50, {{1, 2}, {1, 2}}},
                                        {2, 1, 3, 50, {{0, 2}, {0, 2}}},
                                        {2, 1, 3, 50, {{0, 0}, {0, 0}}}};
  int k = 0;
  const PolicySampler sampler = [&](Rng&) { return seq[k++ % 3]; };
  Rng rng(1);
  std::vector<Candidate> all;
  const Candidate c = sample_best(sampler, [](const PolicySequence&) { return 0.5; }, cfg.model, 3, rng, &all);
  EXPECT_EQ(c.policy, seq[1]);  // zero bytes, earlier than seq[2]
  EXPECT_EQ(all.size(), 3u);
  EXPECT_GT(all[0].bytes, 0u);
}

TEST(SampleBest, MatchesExactExpectedMaximumOnEnumerableSpace) {
  const auto cfg = tiny_config();
  // a fixed score for each of the four (comm, comm) pairs at one sparsity level
  std::map<std::pair<int, int>, double> table;
  Rng t(9);
  std::vector<double> values;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) values.push_back(table[{a, b}] = t.uniform());
  const RewardFn score = [&](const PolicySequence& p) { return table.at({p.steps[0].comm_id, p.steps[1].comm_id}); };
  // E[max of n uniform draws] = sum_k v_(k) * ((k/4)^n - ((k-1)/4)^n), values ascending
  const int n = 8;
  std::sort(values.begin(), values.end());
  double expected = 0.0;
  for (int k = 1; k <= 4; ++k) expected += values[k - 1] * (std::pow(k / 4.0, n) - std::pow((k - 1) / 4.0, n));
  const auto sampler = uniform_sampler(2, 1, 1, 50, 2);
  const int trials = 4000;
  double sum = 0.0;
  for (int seed = 0; seed < trials; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const double got = sample_best(sampler, score, cfg.model, n, rng).accuracy;
    EXPECT_LE(got, values.back());
    sum += got;
  }
  // the spread of a single best-of-8 is below 0.5, so 4000 trials put the mean within 0.02
  EXPECT_NEAR(sum / trials, expected, 0.02);
}

TEST(RandomSampler, CommIdsAreUniform) {
  const auto sampler = uniform_sampler(4, 2, 1, 50, 1);
  Rng rng(11);
  std::vector<int> count(24, 0);
  const int n = 24000;
  for (int i = 0; i < n; ++i) ++count[sampler(rng).steps[0].comm_id];
  double chi2 = 0.0;
  for (int c : count) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 41.64);  // chi-square, 23 degrees of freedom, p = 0.01
}

TEST(RunSearch, SmokeRunEmitsArtifacts) {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.meta_iterations = 1;
  const auto path = (std::filesystem::temp_directory_path() / "snn_search_smoke.snnc").string();
  std::filesystem::remove(path);
  std::vector<std::string> lines;
  SearchOptions opts;
  opts.checkpoint_path = path;
  opts.log_sink = [&](const std::string& l) { lines.push_back(l); };
  const auto art = run_search(cfg, data, opts);
  EXPECT_TRUE(std::filesystem::exists(path));
  ASSERT_EQ(lines.size(), 2u);  // one iteration, one fine-tune
  EXPECT_EQ(lines, art.log_lines);
  EXPECT_NE(lines[0].find("\"mean_reward\""), std::string::npos);
  EXPECT_NE(lines[1].find("\"finetune\""), std::string::npos);
  EXPECT_NO_THROW(art.best_policy.validate(2));
  EXPECT_TRUE(art.controller.has_value());
  EXPECT_GE(art.test_accuracy, 0.0);
  EXPECT_LE(art.test_accuracy, 1.0);
  std::filesystem::remove(path);
}

TEST(RunSearch, InvariantsHoldEveryIteration) {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.meta_iterations = 4;
  const auto art = run_search(cfg, data);
  double kept = -1.0;
  for (const auto& it : art.iterations) {
    EXPECT_GE(it.mean_reward, 0.0);
    EXPECT_LE(it.mean_reward, 1.0);
    EXPECT_GE(it.kept_best_accuracy, kept);
    EXPECT_GE(it.kept_best_accuracy, it.best_val_accuracy);
    kept = it.kept_best_accuracy;
  }
  EXPECT_EQ(art.best_val_accuracy, kept);
}

TEST(RunSearch, FullRunIsDeterministic) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const auto a = run_search(cfg, data);
  const auto b = run_search(cfg, data);
  EXPECT_EQ(a.log_lines, b.log_lines);
  SepGraph ga = a.graph, gb = b.graph;
  EXPECT_EQ(graph_hash(ga), graph_hash(gb));
}

TEST(RunSearch, ResumeMatchesUninterruptedRun) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const auto full = run_search(cfg, data);
  const auto path = (std::filesystem::temp_directory_path() / "snn_search_resume.snnc").string();
  std::filesystem::remove(path);
  SearchOptions first;
  first.checkpoint_path = path;
  first.stop_after = 1;
  run_search(cfg, data, first);
  SearchOptions second;
  second.checkpoint_path = path;
  second.resume = true;
  const auto resumed = run_search(cfg, data, second);
  EXPECT_EQ(resumed.log_lines, full.log_lines);
  EXPECT_EQ(resumed.best_policy, full.best_policy);
  EXPECT_TRUE(resumed.controller->params() == full.controller->params());
  SepGraph a = resumed.graph, b = full.graph;
  EXPECT_EQ(graph_hash(a), graph_hash(b));
  // a different configuration must not silently resume
  auto other = cfg;
  other.candidates = 4;
  EXPECT_THROW(run_search(other, data, second), ConfigError);
  std::filesystem::remove(path);
}

TEST(RandomSearch, WarmStartIsBitExactAndLogsMatchSchema) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  SepGraph warm = warm_start_weights(cfg, data);
  SearchOptions opts;
  opts.warm_start = &warm;
  opts.stop_after = 0;
  auto none = random_search_baseline(cfg, data, opts);
  EXPECT_EQ(graph_hash(none.graph), graph_hash(warm));
  opts.stop_after = -1;
  const auto rnd = random_search_baseline(cfg, data, opts);
  EXPECT_FALSE(rnd.controller.has_value());
  ASSERT_EQ(rnd.iterations.size(), 3u);
  EXPECT_TRUE(std::isnan(rnd.iterations[0].mean_reward));
  EXPECT_NE(rnd.log_lines[0].find("\"mean_reward\":null"), std::string::npos);
  EXPECT_NE(rnd.log_lines[0].find("\"sampler\":\"random\""), std::string::npos);
}

TEST(SearchConfig, Validation) {
  auto c = tiny_config();
  c.candidates = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.controller_lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.shared_lr_decay = 0.5;
  c.shared_lr_decay_every = 2;
  EXPECT_DOUBLE_EQ(c.shared_lr_at(0), c.shared_lr);
  EXPECT_DOUBLE_EQ(c.shared_lr_at(3), c.shared_lr * 0.5);
  EXPECT_DOUBLE_EQ(c.shared_lr_at(4), c.shared_lr * 0.25);
}

}  // namespace
}  // namespace snn
