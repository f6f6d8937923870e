// SPDX-License-Identifier: Apache-2.0
#include "snn/policy.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "snn/error.hpp"

namespace snn {

int CommDecision::source_of(int node) const {
  for (int i = 0; i < nodes(); ++i) {
    if (i != node && dest[i] == node) return i;
  }
  return node;
}

int CommDecision::senders() const {
  int n = 0;
  for (int i = 0; i < nodes(); ++i) n += dest[i] != i;
  return n;
}

std::uint64_t factorial(int n) {
  if (n < 0 || n > 20) throw ConfigError("factorial: argument out of range");
  std::uint64_t f = 1;
  for (int i = 2; i <= n; ++i) f *= static_cast<std::uint64_t>(i);
  return f;
}

static void check_nodes(int nodes) {
  if (nodes < 1) throw ConfigError("node count must be >= 1");
  if (nodes > kMaxNodes) {
    throw ConfigError("node count " + std::to_string(nodes) + " exceeds " + std::to_string(kMaxNodes) +
                      " (G! decision space overflow guard)");
  }
}

CommDecision decode_decision(int nodes, std::uint64_t id) {
  check_nodes(nodes);
  if (id >= factorial(nodes)) {
    throw ConfigError("decision id " + std::to_string(id) + " out of range for G=" + std::to_string(nodes));
  }
  // factorial number system digits pick from the remaining symbols in order
  std::vector<int> pool(nodes);
  std::iota(pool.begin(), pool.end(), 0);
  CommDecision d;
  d.dest.reserve(nodes);
  for (int pos = 0; pos < nodes; ++pos) {
    const std::uint64_t f = factorial(nodes - 1 - pos);
    const auto digit = static_cast<std::size_t>(id / f);
    id %= f;
    d.dest.push_back(pool[digit]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(digit));
  }
  return d;
}

void validate_decision(const CommDecision& d) {
  check_nodes(d.nodes());
  std::vector<bool> seen(d.nodes(), false);
  for (int v : d.dest) {
    if (v < 0 || v >= d.nodes() || seen[v]) throw ConfigError("communication decision is not a permutation");
    seen[v] = true;
  }
}

std::uint64_t encode_decision(const CommDecision& d) {
  validate_decision(d);
  const int n = d.nodes();
  std::uint64_t id = 0;
  for (int pos = 0; pos < n; ++pos) {
    int smaller = 0;
    for (int j = pos + 1; j < n; ++j) smaller += d.dest[j] < d.dest[pos];
    id += static_cast<std::uint64_t>(smaller) * factorial(n - 1 - pos);
  }
  return id;
}

std::vector<CommDecision> enumerate_decisions(int nodes) {
  check_nodes(nodes);
  const std::uint64_t count = factorial(nodes);
  std::vector<CommDecision> out;
  out.reserve(count);
  for (std::uint64_t id = 0; id < count; ++id) out.push_back(decode_decision(nodes, id));
  return out;
}

bool is_comm_intensive(const CommDecision& d) {
  for (int i = 0; i < d.nodes(); ++i) {
    if (d.dest[i] == i) return false;
  }
  return d.nodes() > 0;
}

void SparsityLevel::validate() const {
  if (levels < 1) throw ConfigError("sparsity levels must be >= 1");
  if (p_min < 0 || p_min > 100) throw ConfigError("p_min must lie in [0, 100]");
  if (id < 0 || id >= levels) {
    throw ConfigError("sparsity id " + std::to_string(id) + " out of range [0," + std::to_string(levels) + ")");
  }
}

double SparsityLevel::percentage() const {
  validate();
  if (levels == 1) return 100.0;
  return p_min + static_cast<double>(id) * (100.0 - p_min) / (levels - 1);
}

int n_send(int n_total, const SparsityLevel& level) {
  level.validate();
  if (n_total < 1) throw ConfigError("n_send: n_total must be >= 1");
  if (level.levels == 1) return n_total;
  // percentage = (p_min*(L-1) + id*(100-p_min)) / (L-1)
  const std::int64_t l1 = level.levels - 1;
  const std::int64_t num = static_cast<std::int64_t>(n_total) * (level.p_min * l1 + level.id * (100 - level.p_min));
  return static_cast<int>(num / (100 * l1));
}

std::vector<int> transmission_schedule(int num_blocks, int alpha) {
  if (num_blocks < 1 || alpha < 1) throw ConfigError("transmission_schedule: num_blocks and alpha must be >= 1");
  std::vector<int> points;
  for (int b = alpha; b <= num_blocks; b += alpha) points.push_back(b);
  return points;
}

CommDecision PolicySequence::decision(std::size_t step) const {
  return decode_decision(nodes, static_cast<std::uint64_t>(steps.at(step).comm_id));
}

SparsityLevel PolicySequence::sparsity(std::size_t step) const {
  return SparsityLevel{steps.at(step).sparsity_id, levels, p_min};
}

void PolicySequence::validate(std::size_t expected_steps) const {
  check_nodes(nodes);
  if (alpha < 1) throw ConfigError("policy: alpha must be >= 1");
  if (steps.size() != expected_steps) {
    throw ConfigError("policy length " + std::to_string(steps.size()) + " does not match " +
                      std::to_string(expected_steps) + " transmission points");
  }
  const auto space = factorial(nodes);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].comm_id < 0 || static_cast<std::uint64_t>(steps[t].comm_id) >= space) {
      throw ConfigError("policy step " + std::to_string(t) + ": comm id " + std::to_string(steps[t].comm_id) +
                        " out of range");
    }
    SparsityLevel{steps[t].sparsity_id, levels, p_min}.validate();
  }
}

PolicySequence PolicySequence::all_self(int nodes, int alpha, std::size_t steps, int levels, int p_min) {
  return uniform(nodes, alpha, steps, 0, levels, p_min);
}

PolicySequence PolicySequence::uniform(int nodes, int alpha, std::size_t steps, int comm_id, int levels, int p_min) {
  PolicySequence p{nodes, alpha, levels, p_min, {}};
  p.steps.assign(steps, PolicyStep{comm_id, levels - 1});
  return p;
}

std::string format_policy(const PolicySequence& p) {
  std::ostringstream os;
  os << "snn-policy 1 G=" << p.nodes << " alpha=" << p.alpha << " Kl=" << p.levels << " p_min=" << p.p_min << "\n";
  for (std::size_t t = 0; t < p.steps.size(); ++t) {
    os << t << " " << p.steps[t].comm_id << " " << p.steps[t].sparsity_id << "\n";
  }
  return os.str();
}

static int parse_kv(const std::string& token, const std::string& key) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) throw ConfigError("policy header: expected " + prefix + "<int>, got '" + token + "'");
  try {
    std::size_t used = 0;
    const int v = std::stoi(token.substr(prefix.size()), &used);
    if (used != token.size() - prefix.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("policy header: bad integer in '" + token + "'");
  }
}

PolicySequence parse_policy(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("policy file is empty");
  std::istringstream hdr(line);
  std::string magic, g, a, k, pm;
  int version = 0;
  if (!(hdr >> magic >> version >> g >> a >> k >> pm) || magic != "snn-policy") {
    throw ConfigError("policy file: malformed header '" + line + "'");
  }
  if (version != 1) throw ConfigError("policy file: unsupported version " + std::to_string(version));
  PolicySequence p;
  p.nodes = parse_kv(g, "G");
  p.alpha = parse_kv(a, "alpha");
  p.levels = parse_kv(k, "Kl");
  p.p_min = parse_kv(pm, "p_min");
  std::size_t expected = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t idx = 0;
    PolicyStep s;
    std::string extra;
    if (!(ls >> idx >> s.comm_id >> s.sparsity_id) || (ls >> extra)) {
      throw ConfigError("policy file line " + std::to_string(lineno) + ": expected 'step comm_id sparsity_id'");
    }
    if (idx != expected) throw ConfigError("policy file line " + std::to_string(lineno) + ": steps out of order");
    ++expected;
    p.steps.push_back(s);
  }
  p.validate(p.steps.size());
  return p;
}

void save_policy(const std::string& path, const PolicySequence& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open policy file for writing: " + path);
  out << format_policy(p);
  if (!out) throw Error("failed writing policy file: " + path);
}

PolicySequence load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open policy file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_policy(ss.str());
}

std::uint64_t policy_hash(const PolicySequence& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : format_policy(p)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

boost::multiprecision::cpp_int search_space_size(int nodes, int seq_len, bool with_sparsity, int levels) {
  check_nodes(nodes);
  if (seq_len < 0) throw ConfigError("search_space_size: negative sequence length");
  if (with_sparsity && levels < 1) throw ConfigError("search_space_size: levels must be >= 1");
  boost::multiprecision::cpp_int per_step = factorial(nodes);
  if (with_sparsity) per_step *= levels;
  return boost::multiprecision::pow(per_step, static_cast<unsigned>(seq_len));
}

}  // namespace snn
