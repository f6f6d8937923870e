// SPDX-License-Identifier: Apache-2.0
//
// ResNeXt and separable-ResNeXt graphs.
//
// A separable graph keeps the activations of all G partitions in one tensor:
// partition i owns the channel block [i*c, (i+1)*c) of every feature map.
// The first and last 1x1 convolutions of each bottleneck are grouped with G
// groups, the middle 3x3 with C groups, and batchnorm is per channel, so no
// parameter ever mixes two partitions. Cross-partition traffic only happens
// at transmission points, where partition i's leading channels are routed to
// partition dest[i] and added one window later.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snn/layers.hpp"
#include "snn/policy.hpp"
#include "snn/rng.hpp"
#include "snn/tensor.hpp"

namespace snn {

struct ModelSpec {
  int stages = 3;
  int blocks_per_stage = 6;
  int cardinality = 8;       // C
  int bottleneck_width = 16; // d, doubled every stage
  int kernel = 3;
  int partitions = 1;        // G
  int num_classes = 100;
  int alpha = 1;
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int stem_channels = 16;
  int base_width = 64;       // per-partition output channels of stage 1, doubled every stage

  int total_blocks() const noexcept { return stages * blocks_per_stage; }
  /// Weighted layers: stem + 3 per block + classifier.
  int depth() const noexcept { return 3 * total_blocks() + 2; }
  int transmission_points() const noexcept { return alpha > 0 ? total_blocks() / alpha : 0; }
  void validate() const;

  /// Three-stage spec with depth = 9 * blocks_per_stage + 2 (56, 110, ...).
  static ModelSpec resnext(int depth, int cardinality, int width, int partitions = 1, int alpha = 1,
                           int num_classes = 100);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::string to_string(const ModelSpec& s);

/// Static description of one bottleneck block.
struct BlockGeometry {
  int stage = 0;
  int index = 0;           // global 0-based block index
  int in_per_partition = 0;
  int out_per_partition = 0;
  int inner = 0;           // C * d_stage, all partitions
  int stage_width = 0;     // d_stage
  int stride = 1;
  bool projection = false;
  Shape4 input;            // batch 1, all partitions
  Shape4 output;
};

std::vector<BlockGeometry> block_geometry(const ModelSpec& spec);

class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const BlockGeometry& geo, int cardinality, int partitions, int kernel);

  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 infer(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& grad_out);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);
  void visit_batchnorms(const std::string& prefix, const BatchNormVisitor& fn);

  /// Conv weights only (excludes batchnorm and projection shortcut).
  std::size_t conv_weight_count() const;
  std::size_t param_count() const;
  std::uint64_t macs(const Shape4& in) const;

  /// Standalone block holding partition `part` of `parts`.
  Bottleneck slice_partition(int part, int parts) const;

  const Conv2d& conv1() const noexcept { return conv1_; }
  const Conv2d& conv2() const noexcept { return conv2_; }
  const Conv2d& conv3() const noexcept { return conv3_; }
  bool has_projection() const noexcept { return projection_; }

 private:
  Conv2d conv1_, conv2_, conv3_, proj_;
  BatchNorm2d bn1_, bn2_, bn3_, proj_bn_;
  bool projection_ = false;
  Tensor4 a1_, a2_, out_;  // relu outputs for backward
  bool recorded_ = false;
};

/// Forward-pass knobs that mimic the deployment wire.
struct WireOptions {
  bool half_precision = false;  // round transmitted chunks through f16
};

/// Adds per-partition chunks that were sent at one shape to a feature map
/// of another (later stage) shape: average-pools spatially and zero-pads
/// channels. Identity when shapes agree.
Tensor4 adapt_chunk(const Tensor4& sent, const Shape4& target, int partitions);
Tensor4 adapt_chunk_backward(const Tensor4& grad_target, const Shape4& sent, int partitions);

/// Builds the chunk every partition receives at one transmission point:
/// partition dest[i] gets the first n_send channels of partition i, the
/// rest zero. Partitions nobody sends to receive zeros.
Tensor4 route_chunks(const Tensor4& x, const CommDecision& decision, int keep_channels, int partitions,
                     bool half_precision);
Tensor4 route_chunks_backward(const Tensor4& grad, const CommDecision& decision, int keep_channels, int partitions);

class SepGraph {
 public:
  SepGraph() = default;
  explicit SepGraph(const ModelSpec& spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  int partitions() const noexcept { return spec_.partitions; }
  const std::vector<int>& transmission_blocks() const noexcept { return schedule_; }
  std::size_t transmission_count() const noexcept { return schedule_.size(); }
  const std::vector<BlockGeometry>& geometry() const noexcept { return geometry_; }

  void init(Rng& rng);

  /// Runs the whole network. `policy == nullptr` means no communication
  /// (every node keeps its own data). Records a tape for backward().
  Tensor4 forward(const Tensor4& input, const PolicySequence* policy, Mode mode, WireOptions wire = {});
  /// Inference without a tape; eval-mode statistics.
  Tensor4 infer(const Tensor4& input, const PolicySequence* policy, WireOptions wire = {}) const;
  /// Back-propagates d loss / d logits, accumulating parameter gradients.
  void backward(const Tensor4& grad_logits);

  void zero_grad();
  void visit(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
  void visit_batchnorms(const BatchNormVisitor& fn);
  std::vector<Param*> params();

  Conv2d& stem_conv() noexcept { return stem_conv_; }
  BatchNorm2d& stem_bn() noexcept { return stem_bn_; }
  Linear& head() noexcept { return fc_; }
  const Conv2d& stem_conv() const noexcept { return stem_conv_; }
  const BatchNorm2d& stem_bn() const noexcept { return stem_bn_; }
  const Linear& head() const noexcept { return fc_; }
  std::vector<Bottleneck>& blocks() noexcept { return blocks_; }
  const std::vector<Bottleneck>& blocks() const noexcept { return blocks_; }

  /// Channels each partition owns at the output of the last block.
  int head_channels() const noexcept;

 private:
  void check_policy(const PolicySequence* policy) const;

  ModelSpec spec_;
  std::vector<BlockGeometry> geometry_;
  std::vector<int> schedule_;
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  std::vector<Bottleneck> blocks_;
  Linear fc_;

  struct Tape {
    Shape4 input;
    Tensor4 stem_out;  // relu output
    // per transmission point: shape of the chunk aggregated there (if any)
    std::vector<std::optional<Shape4>> aggregated;
    std::optional<Shape4> final_aggregated;
    std::vector<CommDecision> decisions;
    std::vector<int> keep;
    Shape4 body_out;
  };
  std::optional<Tape> tape_;
};

/// Plain ResNeXt: requires partitions == 1.
SepGraph build_resnext(const ModelSpec& spec);
/// Separable ResNeXt: requires partitions >= 2 dividing the cardinality.
SepGraph build_sep_resnext(const ModelSpec& spec);

std::size_t count_params_enumerated(SepGraph& graph);
/// Sum of conv weights inside bottleneck blocks.
std::size_t count_block_conv_weights(const SepGraph& graph);
/// Trainable scalars owned by each partition; the last entry is the shared
/// stem and head.
std::vector<std::size_t> partition_param_counts(const SepGraph& graph);

/// Closed-form bottleneck parameter counts (weights only).
struct BlockFormula {
  enum class Kind { kPlain, kResNeXt, kSeparable };
  Kind kind = Kind::kResNeXt;
  std::int64_t m_in = 0;   // M
  std::int64_t m_out = 0;  // output side of the block; equals M in the closed forms
  std::int64_t n = 0;      // N for the plain bottleneck
  std::int64_t cardinality = 1;
  std::int64_t width = 1;
  std::int64_t partitions = 1;
  std::int64_t kernel = 3;
};
std::int64_t count_params_formula(const BlockFormula& f);

struct FlopReport {
  std::uint64_t stem_macs = 0;
  std::uint64_t head_macs = 0;
  std::vector<std::uint64_t> block_macs;  // all partitions
  std::uint64_t total_macs = 0;
  int partitions = 1;

  std::uint64_t block_body_macs() const;
  /// Stem is replicated on every node; the head runs on node 0.
  std::uint64_t partition_macs(int node) const;
  std::uint64_t total_flops() const { return 2 * total_macs; }
};

/// MACs per forward pass of a single input (batch 1).
FlopReport count_flops(const SepGraph& graph);

}  // namespace snn
