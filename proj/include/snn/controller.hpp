// SPDX-License-Identifier: Apache-2.0
//
// LSTM policy network over communication decisions.
//
// One LSTM runs two sub-steps per transmission point: the comm head picks a
// routing ID, then (when there is more than one sparsity level) the sparsity
// head picks a level. Every sampled token is embedded and fed back as the
// next input; the first input is a start token. Comm and sparsity tokens
// share one embedding table, so the input also encodes which head fires next.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snn/policy.hpp"
#include "snn/rng.hpp"

namespace snn {

struct ControllerConfig {
  int nodes = 4;
  int levels = 1;  // Kl; 1 disables the sparsity head
  int p_min = 50;
  int alpha = 1;
  int hidden = 100;
  double init_range = 0.1;
  bool zero_init = false;
  double entropy_weight = 0.0;

  void validate() const;
};

/// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ControllerParams {
  Matrix embed;   // tokens x hidden
  Matrix w_x;     // 4H x hidden, gate order i, f, g, o
  Matrix w_h;     // 4H x H
  Matrix bias;    // 4H x 1
  Matrix comm_w;  // G! x H
  Matrix comm_b;  // G! x 1
  Matrix sp_w;    // Kl x H
  Matrix sp_b;    // Kl x 1

  void visit(const std::function<void(const std::string&, Matrix&)>& fn);
  void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  std::size_t size() const;
  bool all_finite() const;
  friend bool operator==(const ControllerParams&, const ControllerParams&) = default;
};

struct SubDecision {
  enum class Kind : std::uint8_t { kComm, kSparsity };
  Kind kind = Kind::kComm;
  int id = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

struct SampleTrace {
  std::vector<SubDecision> steps;
  double total_log_prob = 0.0;
  double reward = 0.0;
  bool has_reward = false;
};

/// One policy with its scalar reward, for a REINFORCE update.
struct ScoredPolicy {
  PolicySequence policy;
  double reward = 0.0;
};

class Controller {
 public:
  Controller() = default;
  Controller(const ControllerConfig& cfg, Rng& rng);

  const ControllerConfig& config() const noexcept { return cfg_; }
  ControllerParams& params() noexcept { return params_; }
  const ControllerParams& params() const noexcept { return params_; }
  int comm_choices() const noexcept { return params_.comm_w.rows; }

  /// Samples seq_len transmission steps. Read-only; safe to call
  /// concurrently with independent rngs.
  std::pair<PolicySequence, SampleTrace> sample(std::size_t seq_len, Rng& rng) const;
  /// Argmax at every sub-step.
  PolicySequence greedy(std::size_t seq_len) const;

  /// Teacher-forced log-probability of `p`.
  double log_prob(const PolicySequence& p) const;
  /// Softmax distribution of every sub-step under teacher forcing.
  std::vector<std::vector<double>> distributions(const PolicySequence& p) const;

  /// Accumulates into `grad` the gradient of
  ///   weight * log pi(p) + entropy_weight * sum of sub-step entropies.
  void accumulate_gradient(const PolicySequence& p, double weight, ControllerParams& grad) const;

  /// Gradient ascent on sum_i (R_i - baseline) grad log pi(p_i). Throws
  /// NumericError on a non-finite reward.
  void reinforce_update(const std::vector<ScoredPolicy>& batch, double baseline, double lr);

  ControllerParams zero_like() const;

 private:
  int start_token() const noexcept { return 0; }
  int comm_token(int id) const noexcept { return 1 + id; }
  int sparsity_token(int id) const noexcept { return 1 + comm_choices() + id; }
  void check_policy(const PolicySequence& p) const;

  ControllerConfig cfg_;
  ControllerParams params_;
};

/// Exponential moving average of batch-mean reward.
double baseline_update(double baseline, const std::vector<double>& rewards, double decay);

/// FNV-1a over the raw bytes of every parameter.
std::uint64_t params_hash(const ControllerParams& p);

}  // namespace snn
