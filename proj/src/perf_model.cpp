// SPDX-License-Identifier: Apache-2.0
#include "snn/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "snn/error.hpp"

namespace snn {

using nlohmann::json;

void ClusterSpec::validate() const {
  if (nodes < 1) throw ConfigError("cluster: nodes must be >= 1");
  if (!(flops_per_sec > 0.0)) throw ConfigError("cluster: compute rate must be > 0");
  if (!(bandwidth_bps > 0.0)) throw ConfigError("cluster: bandwidth must be > 0");
  if (!(message_overhead_s >= 0.0)) throw ConfigError("cluster: message overhead must be >= 0");
}

double ring_allreduce_per_node(double bytes, int nodes) {
  return nodes <= 1 ? 0.0 : 2.0 * (nodes - 1) / nodes * bytes;
}

std::uint64_t baseline_allreduce_volume(const ModelSpec& plain, int nodes) {
  if (plain.partitions != 1) throw ConfigError("baseline: expects the plain (G = 1) model");
  std::uint64_t total = 0;
  for (const auto& b : block_geometry(plain)) {
    const std::uint64_t map = static_cast<std::uint64_t>(b.output.c) * b.output.h * b.output.w * 4;
    // G nodes each move 2(G-1)/G of the map: 2(G-1) maps in total
    total += static_cast<std::uint64_t>(2 * (nodes - 1)) * map;
  }
  return total;
}

std::string baseline_assumptions() {
  return "ring all-reduce of the full f32 output map after every block of the plain model; "
         "per-node traffic 2(G-1)/G x map bytes, summed over G nodes; no headers";
}

ModelSpec plain_counterpart(const ModelSpec& sep) {
  ModelSpec p = sep;
  p.partitions = 1;
  p.alpha = 1;
  return p;
}

namespace {

void check_policy(const ModelSpec& spec, const PolicySequence* policy) {
  spec.validate();
  if (!policy) return;
  if (policy->nodes != spec.partitions) throw ConfigError("policy G does not match the model");
  if (policy->alpha != spec.alpha) throw ConfigError("policy alpha does not match the model");
  policy->validate(static_cast<std::size_t>(spec.transmission_points()));
}

std::uint64_t input_bytes(const ModelSpec& s) {
  return static_cast<std::uint64_t>(s.in_channels) * s.in_height * s.in_width * 4;
}

}  // namespace

CostReport comm_volume(const ModelSpec& spec, const PolicySequence* policy, WireDtype dtype) {
  check_policy(spec, policy);
  CostReport r;
  r.dtype = dtype;
  r.alpha = spec.alpha;
  r.nodes = spec.partitions;
  r.node_bytes.assign(spec.partitions, 0);
  const auto geo = block_geometry(spec);
  const auto schedule = transmission_schedule(spec.total_blocks(), spec.alpha);
  if (policy) {
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      const BlockGeometry& b = geo[schedule[t] - 1];
      const CommDecision d = policy->decision(t);
      StepCost s;
      s.step = static_cast<int>(t);
      s.after_block = schedule[t];
      s.senders = d.senders();
      s.channels_total = b.out_per_partition;
      s.channels_sent = n_send(b.out_per_partition, policy->sparsity(t));
      s.height = b.output.h;
      s.width = b.output.w;
      s.message_bytes = static_cast<std::uint64_t>(s.channels_sent) * s.height * s.width * dtype_bytes(dtype);
      s.bytes = s.message_bytes * s.senders;
      for (int i = 0; i < spec.partitions; ++i)
        if (!d.is_self(i)) r.node_bytes[i] += s.message_bytes;
      r.payload_bytes += s.bytes;
      r.messages += s.senders;
      r.steps.push_back(s);
    }
  }
  const std::uint64_t in = input_bytes(spec) * spec.partitions;
  r.flagged.push_back({"input broadcast", in, static_cast<std::uint64_t>(spec.partitions), true,
                       "coordinator sends the f32 image to every node; each node computes the stem locally"});
  if (!r.steps.empty()) {
    r.flagged.push_back({"final aggregation", r.steps.back().bytes, static_cast<std::uint64_t>(r.steps.back().senders),
                         false, "last step's chunks, added before the head; already counted in the steps"});
  }
  r.total_bytes = r.payload_bytes;
  for (const auto& f : r.flagged)
    if (f.in_total) r.total_bytes += f.bytes;
  r.baseline_bytes = baseline_allreduce_volume(plain_counterpart(spec), spec.partitions);
  r.ratio = r.baseline_bytes ? static_cast<double>(r.total_bytes) / static_cast<double>(r.baseline_bytes) : 0.0;
  return r;
}

std::string CostReport::to_json() const {
  json j;
  j["dtype"] = to_string(dtype);
  j["alpha"] = alpha;
  j["nodes"] = nodes;
  j["payload_bytes"] = payload_bytes;
  j["messages"] = messages;
  j["total_bytes"] = total_bytes;
  j["baseline_bytes"] = baseline_bytes;
  j["baseline_assumptions"] = baseline_assumptions();
  j["ratio"] = ratio;
  j["node_bytes"] = node_bytes;
  j["steps"] = json::array();
  for (const auto& s : steps) {
    j["steps"].push_back({{"step", s.step},
                          {"after_block", s.after_block},
                          {"senders", s.senders},
                          {"channels_total", s.channels_total},
                          {"channels_sent", s.channels_sent},
                          {"height", s.height},
                          {"width", s.width},
                          {"message_bytes", s.message_bytes},
                          {"bytes", s.bytes}});
  }
  j["flagged"] = json::array();
  for (const auto& f : flagged) {
    j["flagged"].push_back(
        {{"name", f.name}, {"bytes", f.bytes}, {"messages", f.messages}, {"in_total", f.in_total}, {"note", f.note}});
  }
  return j.dump(2);
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "step,after_block,senders,channels_total,channels_sent,height,width,message_bytes,bytes\n";
  for (const auto& s : steps) {
    os << s.step << ',' << s.after_block << ',' << s.senders << ',' << s.channels_total << ',' << s.channels_sent << ','
       << s.height << ',' << s.width << ',' << s.message_bytes << ',' << s.bytes << '\n';
  }
  for (const auto& f : flagged) os << f.name << ",,,,,,,," << f.bytes << '\n';
  os << "total,,,,,,,," << total_bytes << '\n' << "baseline,,,,,,,," << baseline_bytes << '\n';
  return os.str();
}

namespace {

struct Costs {
  double stem = 0.0;
  double head = 0.0;
  std::vector<double> block;  // per partition
};

Costs flop_costs(const ModelSpec& spec) {
  const FlopReport f = count_flops(SepGraph(spec));
  Costs c;
  c.stem = 2.0 * static_cast<double>(f.stem_macs);
  c.head = 2.0 * static_cast<double>(f.head_macs);
  for (auto m : f.block_macs) c.block.push_back(2.0 * static_cast<double>(m) / spec.partitions);
  return c;
}

double transmit_seconds(const ClusterSpec& c, std::uint64_t bytes) {
  return static_cast<double>(bytes) * 8.0 / c.bandwidth_bps + c.message_overhead_s;
}

}  // namespace

Feasibility feasibility(const ClusterSpec& cluster, const ModelSpec& spec, const PolicySequence* policy,
                        WireDtype dtype) {
  cluster.validate();
  if (cluster.nodes != spec.partitions) throw ConfigError("feasibility: cluster size must equal G");
  const CostReport vol = comm_volume(spec, policy, dtype);
  const Costs costs = flop_costs(spec);
  Feasibility f;
  if (vol.steps.empty()) return f;
  for (std::size_t t = 0; t + 1 < vol.steps.size(); ++t) {
    const StepCost& s = vol.steps[t];
    if (s.senders == 0) continue;
    double flops = 0.0;
    for (int b = s.after_block; b < vol.steps[t + 1].after_block; ++b) flops += costs.block[b];
    WindowCheck w{s.step, flops / cluster.flops_per_sec, transmit_seconds(cluster, s.message_bytes)};
    f.windows.push_back(w);
    const double m = w.compute_s > 0.0 ? (w.compute_s - w.transmit_s) / w.compute_s
                                       : (w.transmit_s > 0.0 ? -std::numeric_limits<double>::infinity() : 1.0);
    f.margin = std::min(f.margin, m);
  }
  f.feasible = f.margin >= 0.0;
  if (vol.steps.back().senders > 0) f.final_transfer_s = transmit_seconds(cluster, vol.steps.back().message_bytes);
  return f;
}

std::string to_string(Segment::Kind k) {
  switch (k) {
    case Segment::Kind::kInput:
      return "input";
    case Segment::Kind::kCompute:
      return "compute";
    case Segment::Kind::kAggregate:
      return "aggregate";
    case Segment::Kind::kTransmit:
      return "transmit";
    case Segment::Kind::kWait:
      return "wait";
    case Segment::Kind::kFinalWait:
      return "final_wait";
    case Segment::Kind::kHead:
      return "head";
  }
  return "?";
}

namespace {

struct Op {
  enum class Kind { kInput, kCompute, kReceive, kAggregate, kSend, kHead } kind;
  double seconds = 0.0;
  int step = 0;
  bool final = false;
  std::string label;
};

// Programs for every node; node 0 alone runs the head.
std::vector<std::vector<Op>> build_programs(const ClusterSpec& cl, const ModelSpec& spec, const PolicySequence* policy,
                                            const CostReport& vol, const Costs& costs, bool single_node) {
  const int g = single_node ? 1 : spec.partitions;
  const double r = cl.flops_per_sec;
  const double input_s = transmit_seconds(cl, input_bytes(spec));
  const auto schedule = transmission_schedule(spec.total_blocks(), spec.alpha);
  const auto geo = block_geometry(spec);
  std::vector<std::vector<Op>> prog(g);
  for (int n = 0; n < g; ++n) {
    auto& p = prog[n];
    p.push_back({Op::Kind::kInput, input_s, 0, false, "input"});
    p.push_back({Op::Kind::kCompute, costs.stem / r, 0, false, "stem"});
    std::size_t t = 0;
    for (int b = 0; b < static_cast<int>(costs.block.size()); ++b) {
      const double block_s = single_node ? costs.block[b] * spec.partitions / r : costs.block[b] / r;
      p.push_back({Op::Kind::kCompute, block_s, 0, false, "block" + std::to_string(b)});
      if (single_node || !policy || t >= schedule.size() || schedule[t] != b + 1) continue;
      const double agg_s = static_cast<double>(geo[b].out_per_partition) * geo[b].output.h * geo[b].output.w / r;
      if (t > 0 && vol.steps[t - 1].senders > 0) {
        if (policy->decision(t - 1).source_of(n) != n) p.push_back({Op::Kind::kReceive, 0.0, int(t - 1), false, ""});
        p.push_back({Op::Kind::kAggregate, agg_s, int(t - 1), false, "aggregate" + std::to_string(t - 1)});
      }
      if (!policy->decision(t).is_self(n)) {
        p.push_back({Op::Kind::kSend, transmit_seconds(cl, vol.steps[t].message_bytes), int(t), false,
                     "send" + std::to_string(t)});
      }
      ++t;
    }
    if (!single_node && policy && !vol.steps.empty() && vol.steps.back().senders > 0) {
      const int last = static_cast<int>(vol.steps.size()) - 1;
      const auto& s = vol.steps.back();
      if (policy->decision(last).source_of(n) != n) p.push_back({Op::Kind::kReceive, 0.0, last, true, ""});
      p.push_back({Op::Kind::kAggregate, static_cast<double>(s.channels_total) * s.height * s.width / r, last, true,
                   "aggregate" + std::to_string(last)});
    }
    if (n == 0) p.push_back({Op::Kind::kHead, costs.head / r, 0, false, "head"});
  }
  return prog;
}

struct Event {
  double time;
  std::uint64_t seq;
  int node;
  bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
};

Timeline run_programs(const std::vector<std::vector<Op>>& prog, const PolicySequence* policy) {
  const int g = static_cast<int>(prog.size());
  Timeline tl;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> pq;
  std::uint64_t seq = 0;
  std::vector<std::size_t> pc(g, 0);
  std::map<std::pair<int, int>, double> arrival;   // (dst, step) -> time
  std::map<std::pair<int, int>, double> parked;    // (dst, step) -> time the receiver blocked
  std::map<std::pair<int, int>, double> link_free; // (src, dst) -> time
  std::vector<double> wait(g, 0.0), final_wait(g, 0.0);
  for (int n = 0; n < g; ++n) pq.push({0.0, seq++, n});

  auto seg = [&](int node, Segment::Kind k, const std::string& label, double a, double b) {
    tl.segments.push_back({node, k, label, a, b});
  };
  while (!pq.empty()) {
    const Event ev = pq.top();
    pq.pop();
    const int n = ev.node;
    double now = ev.time;
    bool blocked = false;
    while (pc[n] < prog[n].size() && !blocked) {
      const Op& op = prog[n][pc[n]];
      switch (op.kind) {
        case Op::Kind::kInput:
          seg(n, Segment::Kind::kInput, op.label, now, now + op.seconds);
          now += op.seconds;
          break;
        case Op::Kind::kCompute:
        case Op::Kind::kAggregate:
        case Op::Kind::kHead: {
          const auto k = op.kind == Op::Kind::kCompute ? Segment::Kind::kCompute
                         : op.kind == Op::Kind::kAggregate ? Segment::Kind::kAggregate
                                                            : Segment::Kind::kHead;
          seg(n, k, op.label, now, now + op.seconds);
          now += op.seconds;
          break;
        }
        case Op::Kind::kSend: {
          const int dst = policy->decision(op.step).dest[n];
          double& lf = link_free[{n, dst}];
          const double start = std::max(now, lf);
          const double end = start + op.seconds;
          lf = end;
          seg(n, Segment::Kind::kTransmit, op.label + "->" + std::to_string(dst), start, end);
          arrival[{dst, op.step}] = end;
          auto it = parked.find({dst, op.step});
          if (it != parked.end()) {
            pq.push({std::max(it->second, end), seq++, dst});
            parked.erase(it);
          }
          break;
        }
        case Op::Kind::kReceive: {
          auto it = arrival.find({n, op.step});
          if (it == arrival.end()) {
            parked[{n, op.step}] = now;
            blocked = true;
            continue;  // resume at this op once the sender has sent
          }
          if (it->second > now) {
            seg(n, op.final ? Segment::Kind::kFinalWait : Segment::Kind::kWait, "recv" + std::to_string(op.step), now,
                it->second);
            (op.final ? final_wait : wait)[n] += it->second - now;
            now = it->second;
          }
          break;
        }
      }
      ++pc[n];
    }
  }
  for (int n = 0; n < g; ++n) {
    if (pc[n] != prog[n].size()) throw StateError("simulate_latency: deadlock (node " + std::to_string(n) + ")");
  }
  for (const auto& s : tl.segments) {
    tl.makespan = std::max(tl.makespan, s.end);
    if (s.node == 0) {
      if (s.kind == Segment::Kind::kInput) tl.input_s += s.end - s.start;
      if (s.kind == Segment::Kind::kCompute || s.kind == Segment::Kind::kHead) tl.compute_s += s.end - s.start;
      if (s.kind == Segment::Kind::kAggregate) tl.aggregate_s += s.end - s.start;
    }
    if (s.kind == Segment::Kind::kTransmit) tl.transmit_total_s += s.end - s.start;
  }
  double waits = 0.0;
  for (int n = 0; n < g; ++n) {
    tl.exposed_wait_s = std::max(tl.exposed_wait_s, wait[n]);
    tl.final_transfer_s = std::max(tl.final_transfer_s, final_wait[n]);
    waits += wait[n] + final_wait[n];
  }
  tl.transmit_hidden_s = std::max(0.0, tl.transmit_total_s - waits);
  return tl;
}

}  // namespace

Timeline simulate_latency(const ClusterSpec& cluster, const ModelSpec& spec, const PolicySequence* policy,
                          WireDtype dtype) {
  cluster.validate();
  if (cluster.nodes != spec.partitions) throw ConfigError("simulate_latency: cluster size must equal G");
  const CostReport vol = comm_volume(spec, policy, dtype);
  const Costs costs = flop_costs(spec);
  Timeline tl = run_programs(build_programs(cluster, spec, policy, vol, costs, false), policy);
  const Timeline one = run_programs(build_programs(cluster, spec, nullptr, vol, costs, true), nullptr);
  tl.single_node_makespan = one.makespan;
  tl.speedup = tl.makespan > 0.0 ? one.makespan / tl.makespan : 0.0;
  return tl;
}

std::string Timeline::to_json() const {
  json j;
  j["makespan_s"] = makespan;
  j["single_node_makespan_s"] = single_node_makespan;
  j["speedup"] = speedup;
  j["input_s"] = input_s;
  j["compute_s"] = compute_s;
  j["aggregate_s"] = aggregate_s;
  j["exposed_wait_s"] = exposed_wait_s;
  j["final_transfer_s"] = final_transfer_s;
  j["transmit_hidden_s"] = transmit_hidden_s;
  j["transmit_total_s"] = transmit_total_s;
  j["segments"] = json::array();
  for (const auto& s : segments) {
    j["segments"].push_back(
        {{"node", s.node}, {"kind", to_string(s.kind)}, {"label", s.label}, {"start_s", s.start}, {"end_s", s.end}});
  }
  return j.dump(2);
}

std::string Timeline::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "node,kind,label,start_s,end_s\n";
  for (const auto& s : segments) {
    os << s.node << ',' << to_string(s.kind) << ',' << s.label << ',' << s.start << ',' << s.end << '\n';
  }
  return os.str();
}

std::vector<PolicySequence> published_policies() {
  PolicySequence routing{4, 2, 1, 50, {}};
  for (int id : {12, 12, 7, 9, 10, 23, 9, 16, 18}) routing.steps.push_back({id, 0});
  const PolicySequence sparse{4, 2, 9, 50, {{0, 8}, {10, 3}, {18, 7}, {22, 8}, {16, 8}, {18, 8}, {9, 7}, {13, 8}, {22, 7}}};
  const PolicySequence half{4, 2, 9, 50, {{9, 4}, {22, 6}, {18, 6}, {3, 6}, {16, 7}, {23, 8}, {9, 8}, {13, 8}, {20, 7}}};
  return {routing, sparse, half};
}

std::vector<Table6Row> table6(const ModelSpec& sep, const PolicySequence* policy, WireDtype dtype) {
  std::vector<Table6Row> rows;
  const ModelSpec plain = plain_counterpart(sep);
  const std::uint64_t base = baseline_allreduce_volume(plain, sep.partitions);
  rows.push_back({"plain model, ring all-reduce", WireDtype::kF32, base, 1.0, 1.0});
  std::vector<PolicySequence> ps;
  std::vector<WireDtype> dts{WireDtype::kF32, WireDtype::kF32, dtype};
  std::vector<double> reported{-1.0, -1.0, -1.0};
  if (policy) {
    PolicySequence whole = *policy;
    for (auto& s : whole.steps) s.sparsity_id = whole.levels - 1;
    ps = {whole, *policy, *policy};
  } else {
    ps = published_policies();
    dts = {WireDtype::kF32, WireDtype::kF32, WireDtype::kF16};
    reported = {0.3148, 0.2799, 0.1443};
  }
  const char* names[] = {"separable, routing only", "separable + sparsification", "separable + sparsification"};
  for (int i = 0; i < 3; ++i) {
    const CostReport r = comm_volume(sep, &ps[i], dts[i]);
    std::string name = names[i];
    if (i == 2) name += " + " + to_string(dts[i]);
    rows.push_back({name, dts[i], r.total_bytes, r.ratio, reported[i]});
  }
  return rows;
}

std::string table6_text(const std::vector<Table6Row>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(44) << "method" << std::right << std::setw(6) << "dtype" << std::setw(14) << "bytes"
     << std::setw(10) << "ratio" << std::setw(11) << "reported" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(44) << r.method << std::right << std::setw(6) << to_string(r.dtype) << std::setw(14)
       << r.bytes << std::setw(9) << std::fixed << std::setprecision(2) << 100.0 * r.ratio << '%';
    if (r.reported_ratio >= 0.0) {
      os << std::setw(10) << 100.0 * r.reported_ratio << '%';
    } else {
      os << std::setw(11) << "-";
    }
    os << '\n';
  }
  os << "baseline: " << baseline_assumptions() << '\n';
  return os.str();
}

std::string table6_json(const std::vector<Table6Row>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    json row{{"method", r.method}, {"dtype", to_string(r.dtype)}, {"bytes", r.bytes}, {"ratio", r.ratio}};
    if (r.reported_ratio >= 0.0) row["reported_ratio"] = r.reported_ratio;
    j.push_back(row);
  }
  return j.dump(2);
}

}  // namespace snn
