// SPDX-License-Identifier: Apache-2.0
//
// Analytical transmission volume, deployment feasibility, and an
// event-driven latency simulation of a separable network on a homogeneous
// cluster. Only the graph geometry is used; no weights are needed.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snn/model.hpp"
#include "snn/policy.hpp"
#include "snn/wire.hpp"

namespace snn {

struct ClusterSpec {
  int nodes = 4;
  double flops_per_sec = 1.7e8;
  double bandwidth_bps = 300e6;
  double message_overhead_s = 0.0;

  void validate() const;
};

struct StepCost {
  int step = 0;
  int after_block = 0;  // 1-based
  int senders = 0;
  int channels_total = 0;  // per partition
  int channels_sent = 0;
  int height = 0;
  int width = 0;
  std::uint64_t message_bytes = 0;  // payload of one message
  std::uint64_t bytes = 0;          // all messages of the step
};

/// Transfers outside the per-step routing, reported separately.
struct LineItem {
  std::string name;
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
  bool in_total = false;
  std::string note;
};

struct CostReport {
  WireDtype dtype = WireDtype::kF32;
  int alpha = 1;
  int nodes = 1;
  std::vector<StepCost> steps;
  std::vector<std::uint64_t> node_bytes;  // sent by each node, routing only
  std::uint64_t payload_bytes = 0;        // routing payload, all steps
  std::uint64_t messages = 0;
  std::vector<LineItem> flagged;
  std::uint64_t total_bytes = 0;  // payload plus flagged items marked in_total
  std::uint64_t baseline_bytes = 0;
  double ratio = 0.0;  // total_bytes / baseline_bytes

  std::string to_json() const;
  std::string to_csv() const;
};

/// Bytes moved by ring all-reduce of the full output map after every block
/// of the plain (G = 1) model: G * 2(G-1)/G * map_bytes per block, f32.
std::uint64_t baseline_allreduce_volume(const ModelSpec& plain, int nodes);
/// Per-node traffic of one ring all-reduce of `bytes`.
double ring_allreduce_per_node(double bytes, int nodes);
std::string baseline_assumptions();

/// Routing volume of `policy` over the separable model `spec`. A null
/// policy means no routing. The input broadcast to G-1 nodes is a flagged
/// item included in the total; the last step's transfer is flagged for
/// information (it is already in the steps).
CostReport comm_volume(const ModelSpec& spec, const PolicySequence* policy, WireDtype dtype);

/// Plain counterpart of a separable spec (same widths per partition, G = 1).
ModelSpec plain_counterpart(const ModelSpec& sep);

struct WindowCheck {
  int step = 0;
  double compute_s = 0.0;
  double transmit_s = 0.0;
};

struct Feasibility {
  bool feasible = true;
  double margin = 1.0;  // min over windows of (compute - transmit) / compute
  std::vector<WindowCheck> windows;
  double final_transfer_s = 0.0;  // last send has no window to hide behind
};

/// A window is the compute between transmission point t and t+1 on one
/// partition; the message sent at t must arrive within it.
Feasibility feasibility(const ClusterSpec& cluster, const ModelSpec& spec, const PolicySequence* policy,
                        WireDtype dtype = WireDtype::kF32);

struct Segment {
  enum class Kind { kInput, kCompute, kAggregate, kTransmit, kWait, kFinalWait, kHead };
  int node = 0;
  Kind kind = Kind::kCompute;
  std::string label;
  double start = 0.0;
  double end = 0.0;
};
std::string to_string(Segment::Kind k);

struct Timeline {
  std::vector<Segment> segments;
  double makespan = 0.0;
  double single_node_makespan = 0.0;
  double speedup = 0.0;
  // totals over node 0's critical path unless stated otherwise
  double input_s = 0.0;            // first transmission (input broadcast)
  double compute_s = 0.0;          // stem + blocks + head
  double aggregate_s = 0.0;
  double exposed_wait_s = 0.0;     // max over nodes, intermediate boundaries
  double final_transfer_s = 0.0;   // max over nodes, wait before the head
  double transmit_hidden_s = 0.0;  // all nodes, transmit time overlapped by compute
  double transmit_total_s = 0.0;   // all nodes

  std::string to_json() const;
  std::string to_csv() const;
};

/// Each node computes the stem, then its blocks in order. At transmission
/// point t it first adds the chunk sent at t-1 (waiting for it if needed),
/// then starts its own send, which occupies the sender->receiver link while
/// compute continues. Node 0 adds the last chunk and runs the head.
Timeline simulate_latency(const ClusterSpec& cluster, const ModelSpec& spec, const PolicySequence* policy,
                          WireDtype dtype = WireDtype::kF32);

/// Decision sequences found for the 4-way, alpha = 2, depth-56 model, in
/// order: routing only; routing + sparsity; routing + sparsity for f16.
std::vector<PolicySequence> published_policies();

struct Table6Row {
  std::string method;
  WireDtype dtype = WireDtype::kF32;
  std::uint64_t bytes = 0;
  double ratio = 0.0;
  double reported_ratio = -1.0;  // negative when there is no published figure
};

/// Baseline plus three separable rows. With `policy == nullptr` the
/// published sequences are used; otherwise the rows are: routing of
/// `policy` with every chunk sent whole (f32), `policy` as given (f32), and
/// `policy` as given at `dtype`.
std::vector<Table6Row> table6(const ModelSpec& sep, const PolicySequence* policy, WireDtype dtype = WireDtype::kF16);
std::string table6_text(const std::vector<Table6Row>& rows);
std::string table6_json(const std::vector<Table6Row>& rows);

}  // namespace snn
