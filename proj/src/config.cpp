// SPDX-License-Identifier: Apache-2.0
#include "snn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "snn/error.hpp"

namespace snn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

int parse_int32(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError("config: " + key + " out of range");
  return static_cast<int>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

// shortest text that parses back to the same double
std::string fmt(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SNN_INT(NAME, EXPR)                                                                    \
  {                                                                                            \
    NAME, {                                                                                    \
      [](RunConfig& c, const std::string& v) { EXPR = parse_int32(NAME, v); },                 \
          [](const RunConfig& c) { return std::to_string(EXPR); }                              \
    }                                                                                          \
  }
#define SNN_DOUBLE(NAME, EXPR)                                                                 \
  {                                                                                            \
    NAME, {                                                                                    \
      [](RunConfig& c, const std::string& v) { EXPR = parse_double(NAME, v); },                \
          [](const RunConfig& c) { return fmt(EXPR); }                                         \
    }                                                                                          \
  }
#define SNN_STRING(NAME, EXPR)                                                                 \
  {                                                                                            \
    NAME, {                                                                                    \
      [](RunConfig& c, const std::string& v) { EXPR = v; }, [](const RunConfig& c) { return EXPR; } \
    }                                                                                          \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      SNN_INT("model.stages", c.model.stages),
      SNN_INT("model.blocks_per_stage", c.model.blocks_per_stage),
      SNN_INT("model.depth", c.model_depth),
      SNN_INT("model.cardinality", c.model.cardinality),
      SNN_INT("model.width", c.model.bottleneck_width),
      SNN_INT("model.kernel", c.model.kernel),
      SNN_INT("model.partitions", c.model.partitions),
      SNN_INT("model.classes", c.model.num_classes),
      SNN_INT("model.alpha", c.model.alpha),
      SNN_INT("model.in_channels", c.model.in_channels),
      SNN_INT("model.image_size", c.model.in_height),
      SNN_INT("model.stem_channels", c.model.stem_channels),
      SNN_INT("model.base_width", c.model.base_width),
      SNN_INT("search.levels", c.search.levels),
      SNN_INT("search.p_min", c.search.p_min),
      SNN_INT("search.meta_iterations", c.search.meta_iterations),
      SNN_INT("search.shared_steps_per_iter", c.search.shared_steps_per_iter),
      SNN_INT("search.controller_steps_per_iter", c.search.controller_steps_per_iter),
      SNN_INT("search.controller_batch", c.search.controller_batch),
      SNN_INT("search.candidates", c.search.candidates),
      SNN_INT("search.monte_carlo", c.search.monte_carlo),
      SNN_INT("search.warmup_steps", c.search.warmup_steps),
      SNN_DOUBLE("search.shared_lr", c.search.shared_lr),
      SNN_DOUBLE("search.shared_lr_decay", c.search.shared_lr_decay),
      SNN_INT("search.shared_lr_decay_every", c.search.shared_lr_decay_every),
      SNN_DOUBLE("search.controller_lr", c.search.controller_lr),
      SNN_DOUBLE("search.baseline_decay", c.search.baseline_decay),
      SNN_INT("search.controller_hidden", c.search.controller_hidden),
      SNN_DOUBLE("search.entropy_weight", c.search.entropy_weight),
      SNN_DOUBLE("search.fine_tune_lr", c.search.fine_tune_lr),
      SNN_INT("search.fine_tune_epochs", c.search.fine_tune_epochs),
      SNN_INT("search.batch_size", c.search.batch_size),
      SNN_INT("search.reward_batch", c.search.reward_batch),
      SNN_INT("dataset.train_images", c.dataset.train_images),
      SNN_INT("dataset.test_images", c.dataset.test_images),
      SNN_DOUBLE("dataset.validation_fraction", c.dataset.validation_fraction),
      SNN_DOUBLE("dataset.noise", c.dataset.noise),
      SNN_DOUBLE("cluster.flops", c.cluster.flops_per_sec),
      SNN_DOUBLE("cluster.bandwidth", c.cluster.bandwidth_bps),
      SNN_DOUBLE("cluster.overhead", c.cluster.message_overhead_s),
      SNN_DOUBLE("runtime.timeout", c.timeout_s),
      SNN_STRING("runtime.host", c.host),
      SNN_STRING("output_dir", c.output_dir),
      SNN_STRING("policy", c.policy_path),
      SNN_STRING("checkpoint", c.checkpoint_path),
      {"wire.dtype",
       {[](RunConfig& c, const std::string& v) { c.dtype = parse_dtype(v); },
        [](const RunConfig& c) { return to_string(c.dtype); }}},
      {"search.sampler",
       {[](RunConfig& c, const std::string& v) { c.search.sampler = parse_sampler(v); },
        [](const RunConfig& c) { return to_string(c.search.sampler); }}},
      {"seed",
       {[](RunConfig& c, const std::string& v) {
          const long long s = parse_int("seed", v);
          if (s < 0) throw ConfigError("config: seed must be >= 0");
          c.seed = static_cast<std::uint64_t>(s);
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
  };
  return table;
}

#undef SNN_INT
#undef SNN_DOUBLE
#undef SNN_STRING

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& t = fields();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, value);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

void RunConfig::resolve() {
  model.in_width = model.in_height;
  if (model_depth > 0) {
    const int per = 3 * model.stages;
    if (model_depth < 2 + per || (model_depth - 2) % per != 0) {
      throw ConfigError("config: model.depth " + std::to_string(model_depth) + " is not 3 * stages * blocks + 2");
    }
    model.blocks_per_stage = (model_depth - 2) / per;
  }
  model.validate();
  search.model = model;
  search.seed = seed;
  dataset.seed = seed;
  dataset.size = model.in_height;
  dataset.classes = model.num_classes;
  cluster.nodes = model.partitions;
  cluster.validate();
  if (!(timeout_s > 0.0)) throw ConfigError("config: runtime.timeout must be > 0");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, f] : fields()) {
    os << k << " = " << f.get(*this) << '\n';
  }
  return os.str();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    out.emplace_back(key, value);
  }
  return out;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = desk_preset();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) c.set(k, v);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + o + "' is not key=value");
    c.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (const char* env = std::getenv("SNN_OUTPUT_DIR"); env && *env) c.output_dir = env;
  c.resolve();
  return c;
}

RunConfig desk_preset() {
  RunConfig c;
  c.model.stages = 2;
  c.model.blocks_per_stage = 2;
  c.model.cardinality = 4;
  c.model.bottleneck_width = 2;
  c.model.partitions = 4;
  c.model.alpha = 2;
  c.model.num_classes = 6;
  c.model.in_height = c.model.in_width = 16;
  c.model.stem_channels = 8;
  c.model.base_width = 8;
  c.search.warmup_steps = 300;
  c.search.levels = 9;
  c.search.controller_lr = 0.3;
  c.resolve();
  return c;
}

}  // namespace snn
