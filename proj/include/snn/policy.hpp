// SPDX-License-Identifier: Apache-2.0
//
// Communication-decision space: routing permutations, sparsification
// levels, the staleness schedule, and the plain-text policy file.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace snn {

/// dest[i] is the node that node i sends its chunk to; dest[i] == i means
/// node i does not transmit. Always a permutation of 0..G-1.
struct CommDecision {
  std::vector<int> dest;

  int nodes() const noexcept { return static_cast<int>(dest.size()); }
  bool is_self(int node) const { return dest.at(node) == node; }
  /// Node that sends to `node`, or `node` itself when nobody does.
  int source_of(int node) const;
  int senders() const;

  friend bool operator==(const CommDecision&, const CommDecision&) = default;
};

constexpr int kMaxNodes = 12;

std::uint64_t factorial(int n);

/// All G! decisions in lexicographic order of `dest`; position = decision ID.
std::vector<CommDecision> enumerate_decisions(int nodes);
CommDecision decode_decision(int nodes, std::uint64_t id);
std::uint64_t encode_decision(const CommDecision& d);
/// Throws ConfigError unless `d` is a permutation.
void validate_decision(const CommDecision& d);

/// True iff every node sends to a different node (no fixed point).
bool is_comm_intensive(const CommDecision& d);

/// Discrete sparsification level `id` out of `levels`, spanning
/// [p_min, 100] percent in equal steps.
struct SparsityLevel {
  int id = 0;
  int levels = 1;
  int p_min = 50;

  /// Percentage of leading channels transmitted.
  double percentage() const;
  void validate() const;
};

/// floor(n_total * percentage / 100), computed exactly.
int n_send(int n_total, const SparsityLevel& level);

/// 1-based block indices after which a transmission starts.
std::vector<int> transmission_schedule(int num_blocks, int alpha);

struct PolicyStep {
  int comm_id = 0;
  int sparsity_id = 0;
  friend bool operator==(const PolicyStep&, const PolicyStep&) = default;
};

/// One (routing, sparsity) pair per transmission point.
struct PolicySequence {
  int nodes = 1;
  int alpha = 1;
  int levels = 1;
  int p_min = 50;
  std::vector<PolicyStep> steps;

  std::size_t size() const noexcept { return steps.size(); }
  CommDecision decision(std::size_t step) const;
  SparsityLevel sparsity(std::size_t step) const;
  /// Throws ConfigError when IDs are out of range or the length is not
  /// `expected_steps`.
  void validate(std::size_t expected_steps) const;

  /// Every node keeps its own data at every step.
  static PolicySequence all_self(int nodes, int alpha, std::size_t steps, int levels = 1, int p_min = 50);
  /// The same decision at every step, full sparsity level.
  static PolicySequence uniform(int nodes, int alpha, std::size_t steps, int comm_id, int levels = 1, int p_min = 50);

  friend bool operator==(const PolicySequence&, const PolicySequence&) = default;
};

/// Plain-text policy file:
///   snn-policy 1 G=<g> alpha=<a> Kl=<k> p_min=<p>
///   <step_index> <comm_id> <sparsity_id>   (one line per step)
std::string format_policy(const PolicySequence& p);
PolicySequence parse_policy(const std::string& text);
void save_policy(const std::string& path, const PolicySequence& p);
PolicySequence load_policy(const std::string& path);
/// FNV-1a over the canonical text form.
std::uint64_t policy_hash(const PolicySequence& p);

/// (G!)^seq_len, times levels^seq_len when sparsity decisions are searched.
boost::multiprecision::cpp_int search_space_size(int nodes, int seq_len, bool with_sparsity, int levels);

}  // namespace snn
