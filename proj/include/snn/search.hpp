// SPDX-License-Identifier: Apache-2.0
//
// Weight-sharing search over communication policies. Each meta-iteration
// trains the shared separable network under sampled policies, trains the
// controller on validation accuracy, then samples candidates and keeps the
// best. The random-sampler ablation runs the same loop with uniform draws
// and no controller training.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snn/controller.hpp"
#include "snn/dataset.hpp"
#include "snn/model.hpp"
#include "snn/policy.hpp"

namespace snn {

enum class SamplerKind { kController, kRandom };
std::string to_string(SamplerKind k);
SamplerKind parse_sampler(const std::string& s);

struct SearchConfig {
  ModelSpec model;
  int levels = 1;  // sparsity levels searched; 1 sends every chunk whole
  int p_min = 50;
  int meta_iterations = 10;
  int shared_steps_per_iter = 100;
  int controller_steps_per_iter = 50;
  int controller_batch = 1;  // policies per REINFORCE update
  int candidates = 20;
  int monte_carlo = 1;  // policies averaged per shared-weight step
  int warmup_steps = 0;  // uniform-policy pre-training before iteration 1
  double shared_lr = 0.05;
  double shared_lr_decay = 1.0;  // multiplied in every shared_lr_decay_every iterations
  int shared_lr_decay_every = 0;
  double controller_lr = 0.05;
  double baseline_decay = 0.95;
  int controller_hidden = 100;
  double entropy_weight = 0.0;
  double fine_tune_lr = 0.01;
  int fine_tune_epochs = 5;
  int batch_size = 32;
  int reward_batch = 64;
  std::uint64_t seed = 1;
  SamplerKind sampler = SamplerKind::kController;

  void validate() const;
  std::size_t seq_len() const { return static_cast<std::size_t>(model.transmission_points()); }
  ControllerConfig controller_config() const;
  /// Learning rate of the shared weights during meta-iteration `iteration`.
  double shared_lr_at(int iteration) const;
};

using PolicySampler = std::function<PolicySequence(Rng&)>;
using RewardFn = std::function<double(const PolicySequence&)>;

nlohmann::json search_config_to_json(const SearchConfig& c);

PolicySampler uniform_sampler(int nodes, int alpha, int levels, int p_min, std::size_t steps);

/// Fraction of correct argmax predictions of `graph` (eval mode) on `n`
/// images of `split` starting at `begin`, wrapping around the end.
double accuracy(const SepGraph& graph, const PolicySequence& policy, const Split& split, int begin, int n);
/// Whole split, in chunks of `chunk` images.
double accuracy(const SepGraph& graph, const PolicySequence& policy, const Split& split, int chunk = 256);

/// FNV-1a over every parameter and batchnorm buffer.
std::uint64_t graph_hash(SepGraph& graph);

/// Stage (1). Per step: one mini-batch, `monte_carlo` sampled policies,
/// gradients averaged over them, one SGD step. Returns the mean loss.
double train_shared_weights(SepGraph& graph, const PolicySampler& sampler, const Split& train, int steps,
                            int batch_size, int monte_carlo, double lr, Rng& rng);

struct ControllerState {
  double baseline = 0.0;
  bool baseline_ready = false;
  int val_cursor = 0;  // round-robin position in the validation split
};

/// Stage (2) with an arbitrary reward. Per step: sample a batch of
/// policies, reward each, REINFORCE against the EMA baseline. Returns the
/// mean reward.
double train_controller(Controller& ctl, const RewardFn& reward, std::size_t seq_len, int steps, int batch, double lr,
                        double decay, ControllerState& state, Rng& rng);
/// Stage (2) on validation accuracy; the graph is only read.
double train_controller(Controller& ctl, const SepGraph& graph, const Split& validation, const SearchConfig& cfg,
                        ControllerState& state, Rng& rng);

struct Candidate {
  PolicySequence policy;
  double accuracy = 0.0;
  std::uint64_t bytes = 0;  // routing payload, f32
};

/// Stage (3): the best of `n` sampled candidates by `score`; ties go to
/// fewer bytes, then to the earlier candidate.
Candidate sample_best(const PolicySampler& sampler, const RewardFn& score, const ModelSpec& spec, int n, Rng& rng,
                      std::vector<Candidate>* all = nullptr);

struct IterationLog {
  int iteration = 0;
  double shared_lr = 0.0;
  double shared_loss = 0.0;
  double mean_reward = 0.0;  // NaN for the random sampler (no controller stage)
  double best_batch_accuracy = 0.0;
  double best_val_accuracy = 0.0;  // best candidate on the whole validation split
  double kept_best_accuracy = 0.0;
  PolicySequence best_policy;
  std::uint64_t graph_hash = 0;
  std::uint64_t controller_hash = 0;

  std::string to_json(SamplerKind sampler) const;
};

struct SearchArtifacts {
  SamplerKind sampler = SamplerKind::kController;
  PolicySequence best_policy;
  double best_val_accuracy = 0.0;  // kept best before fine-tuning
  SepGraph graph;                  // fine-tuned kept-best weights
  std::optional<Controller> controller;
  double finetune_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double finetune_loss = 0.0;
  std::vector<IterationLog> iterations;
  std::vector<std::string> log_lines;  // JSON lines, as emitted
};

struct SearchOptions {
  const SepGraph* warm_start = nullptr;  // copied bit-exactly before iteration 1
  std::string checkpoint_path;           // written after every iteration when set
  bool resume = false;                   // continue from checkpoint_path when it exists
  int stop_after = -1;                   // stop after this many iterations (no fine-tune)
  bool fine_tune = true;
  std::function<void(const std::string&)> log_sink;
};

SearchArtifacts run_search(const SearchConfig& cfg, const DatasetHandle& data, const SearchOptions& opts = {});
/// run_search with the uniform sampler and no controller stage.
SearchArtifacts random_search_baseline(SearchConfig cfg, const DatasetHandle& data, const SearchOptions& opts = {});

/// Uniform-policy pre-training used to warm-start both samplers.
SepGraph warm_start_weights(const SearchConfig& cfg, const DatasetHandle& data);

/// Trains `graph` under the fixed `policy`. Returns the final epoch's mean loss.
double fine_tune(SepGraph& graph, const PolicySequence& policy, const Split& train, int epochs, int batch_size,
                 double lr, Rng& rng);

}  // namespace snn
