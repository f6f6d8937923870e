// SPDX-License-Identifier: Apache-2.0
//
// Distributed inference. Each node runs one partition: the replicated stem,
// its slice of every bottleneck, and (node 0 only) the classifier head. At a
// transmission point a node first adds the chunk routed to it one window
// earlier, then ships the leading channels of its own map to dest[node].
//
// Processes talk over TCP. Every frame on a peer or coordinator link is
// preceded by an SNNQ frame carrying the request id, so frames left over
// from an aborted request are recognised and dropped.
#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snn/layers.hpp"
#include "snn/model.hpp"
#include "snn/policy.hpp"
#include "snn/wire.hpp"

namespace snn {

/// Everything one node needs to run its partition.
struct PartitionModel {
  int node = 0;
  ModelSpec spec;
  PolicySequence policy;
  Conv2d stem_conv;
  BatchNorm2d stem_bn;
  std::vector<Bottleneck> blocks;
  std::vector<int> schedule;  // transmission point t follows block schedule[t] - 1
  std::vector<int> keep;      // channels sent at each point
  std::optional<Linear> head;  // node 0 only
};

PartitionModel extract_partition(const SepGraph& graph, const PolicySequence& policy, int node);

/// Per-node wall-clock split of one inference.
struct PhaseTimes {
  double compute_s = 0.0;  // stem, blocks, aggregation, encoding
  double wait_s = 0.0;     // blocked on an expected message
  double head_s = 0.0;
  nlohmann::json to_json() const;
  static PhaseTimes from_json(const nlohmann::json& j);
};

/// How a partition exchanges chunks with its peers.
class PeerTransport {
 public:
  virtual ~PeerTransport() = default;
  virtual void send(int dst, std::vector<std::uint8_t> frame) = 0;
  /// Blocks until the message from `src` for transmission point `step` arrives.
  virtual std::vector<std::uint8_t> receive(int src, std::uint16_t step) = 0;
};

/// Runs one partition on a batch-1 input. Returns the logits on node 0 and
/// an empty tensor elsewhere.
Tensor4 run_partition(const PartitionModel& m, const Tensor4& input, WireDtype dtype, PeerTransport& transport,
                      PhaseTimes* times = nullptr);

/// The equivalence oracle: all partitions in one tensor, same schedule,
/// f16 rounding applied to routed chunks when dtype is f16.
Tensor4 single_process_reference(const SepGraph& graph, const PolicySequence& policy, const Tensor4& input,
                                 WireDtype dtype = WireDtype::kF32);

/// All partitions in one process, one thread each, exchanging real encoded
/// frames through an in-memory mailbox.
Tensor4 run_partitions_in_memory(const SepGraph& graph, const PolicySequence& policy, const Tensor4& input,
                                 WireDtype dtype = WireDtype::kF32);

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string str() const;
  static Endpoint parse(const std::string& s);
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

struct WorkerConfig {
  std::vector<int> nodes;        // partitions hosted by this process
  std::vector<Endpoint> peers;   // endpoint of every node; hosted nodes share one
  std::shared_ptr<const SepGraph> graph;
  PolicySequence policy;
  WireDtype dtype = WireDtype::kF32;
  double timeout_s = 30.0;
  int exit_at_step = -1;  // fault injection: the process dies on reaching this transmission point

  void validate() const;
  const Endpoint& listen() const { return peers.at(static_cast<std::size_t>(nodes.at(0))); }
};

/// Serves inference requests until a coordinator asks it to stop. Throws
/// ConfigError when a peer's policy hash differs (the worker refuses to start).
void run_worker(const WorkerConfig& cfg);

/// fork()s a child process that runs run_worker and exits.
pid_t spawn_worker(const WorkerConfig& cfg);

/// Ports that were free a moment ago, for loopback deployments.
std::vector<int> free_ports(int n);

struct InferTiming {
  double broadcast_s = 0.0;  // until node 0 has its input
  double compute_s = 0.0;  // node 0
  double exposed_wait_s = 0.0;
  double head_s = 0.0;
  double transfer_s = 0.0;  // input arrival and logits reply
  double total_s = 0.0;
  std::vector<PhaseTimes> nodes;
  nlohmann::json to_json() const;
};

struct InferResult {
  int class_id = 0;
  Tensor4 logits;
  InferTiming timing;
};

struct CoordinatorConfig {
  std::vector<Endpoint> peers;  // endpoint of every node
  std::uint64_t policy_hash = 0;
  double timeout_s = 30.0;
};

class Coordinator {
 public:
  explicit Coordinator(CoordinatorConfig cfg);
  ~Coordinator();
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  /// One batch-1 image. Throws RuntimeFailure when any node fails; the
  /// next call reconnects to restarted workers.
  InferResult infer(const Tensor4& image);
  /// Asks every reachable worker process to exit.
  void shutdown_workers();

 private:
  struct Link;
  void connect_missing(std::chrono::steady_clock::time_point deadline);
  CoordinatorConfig cfg_;
  std::vector<Endpoint> endpoints_;  // distinct, in node order
  std::vector<std::vector<int>> hosted_;
  std::vector<std::unique_ptr<Link>> links_;
  std::uint32_t next_request_ = 1;
};

}  // namespace snn
