// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer set for grouped-convolution networks. Every layer caches the
// inputs its backward pass needs during forward(); backward() without a
// preceding forward() throws StateError.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snn/rng.hpp"
#include "snn/tensor.hpp"

namespace snn {

enum class Mode { kTrain, kEval };

/// Trainable tensor with its gradient accumulator.
struct Param {
  Tensor4 value;
  Tensor4 grad;

  Param() = default;
  explicit Param(Shape4 shape) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0f); }
};

using ParamVisitor = std::function<void(const std::string&, Param&)>;
using BufferVisitor = std::function<void(const std::string&, Tensor4&)>;
class BatchNorm2d;
using BatchNormVisitor = std::function<void(const std::string&, BatchNorm2d&)>;

/// 2-D convolution with square kernels, "same" padding (kernel/2), no bias.
/// Weight layout is (out, in/groups, k, k); output-channel group g reads
/// input-channel group g only.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int groups);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  int kernel() const noexcept { return k_; }
  int stride() const noexcept { return stride_; }
  int groups() const noexcept { return groups_; }
  int padding() const noexcept { return k_ / 2; }

  Shape4 output_shape(const Shape4& in) const;
  Tensor4 forward(const Tensor4& x);
  /// Inference-only forward: no tape is recorded.
  Tensor4 infer(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& grad_out);

  /// He-normal init scaled by fan-in.
  void init(Rng& rng);

  Param& weight() noexcept { return weight_; }
  const Param& weight() const noexcept { return weight_; }
  std::size_t num_params() const noexcept { return weight_.value.size(); }
  /// Multiply-accumulates for one forward pass on `in`.
  std::uint64_t macs(const Shape4& in) const;

  /// Standalone conv holding output-channel groups [first, first+count).
  Conv2d slice_groups(int first, int count) const;

  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  void check_input(const Shape4& in) const;

  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int groups_ = 1;
  Param weight_;
  std::optional<Tensor4> cached_input_;
};

/// Per-channel batch normalization, eps 1e-5, running-stat momentum 0.9.
class BatchNorm2d {
 public:
  static constexpr float kEps = 1e-5f;
  static constexpr float kMomentum = 0.9f;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  int channels() const noexcept { return channels_; }
  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 infer(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& grad_out);

  Param& gamma() noexcept { return gamma_; }
  Param& beta() noexcept { return beta_; }
  const Param& gamma() const noexcept { return gamma_; }
  const Param& beta() const noexcept { return beta_; }
  Tensor4& running_mean() noexcept { return running_mean_; }
  Tensor4& running_var() noexcept { return running_var_; }
  const Tensor4& running_mean() const noexcept { return running_mean_; }
  const Tensor4& running_var() const noexcept { return running_var_; }
  bool has_statistics() const noexcept { return stats_ready_; }
  void mark_statistics_ready() noexcept { stats_ready_ = true; }
  std::size_t num_params() const noexcept { return 2 * static_cast<std::size_t>(channels_); }

  BatchNorm2d slice_channels(int first, int count) const;

  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);

 private:
  int channels_ = 0;
  Param gamma_;
  Param beta_;
  Tensor4 running_mean_;
  Tensor4 running_var_;
  bool stats_ready_ = false;

  struct Tape {
    Mode mode;
    Tensor4 xhat;
    std::vector<float> inv_std;
  };
  std::optional<Tape> tape_;
};

/// Fully connected layer on (N, C, 1, 1) inputs; weight (out, in, 1, 1), bias (out).
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }
  Tensor4 forward(const Tensor4& x);
  Tensor4 infer(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& grad_out);
  void init(Rng& rng);

  Param& weight() noexcept { return weight_; }
  Param& bias() noexcept { return bias_; }
  const Param& weight() const noexcept { return weight_; }
  const Param& bias() const noexcept { return bias_; }
  std::size_t num_params() const noexcept { return weight_.value.size() + bias_.value.size(); }

  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;
  Param bias_;
  std::optional<Tensor4> cached_input_;
};

Tensor4 relu(const Tensor4& x);
/// Gradient of relu given its forward output.
Tensor4 relu_backward(const Tensor4& y, const Tensor4& grad_out);

Tensor4 global_avg_pool(const Tensor4& x);
Tensor4 global_avg_pool_backward(const Shape4& input_shape, const Tensor4& grad_out);

struct SoftmaxCE {
  float loss = 0.0f;   // mean over the batch
  Tensor4 probs;       // (N, K, 1, 1)
  Tensor4 grad;        // d loss / d logits
};

/// Softmax + mean cross-entropy. Labels must lie in [0, K).
SoftmaxCE softmax_cross_entropy(const Tensor4& logits, std::span<const int> labels);

/// Row-wise argmax of (N, K, 1, 1) logits.
std::vector<int> argmax_rows(const Tensor4& logits);

/// p <- p - lr * g. Throws NumericError on a non-finite gradient.
void sgd_step(Param& p, float lr);
void sgd_step(std::span<Param* const> params, float lr);

}  // namespace snn
