// SPDX-License-Identifier: Apache-2.0
#include "snn/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "snn/checkpoint.hpp"
#include "snn/error.hpp"
#include "snn/layers.hpp"
#include "snn/perf_model.hpp"

namespace snn {

using nlohmann::json;

std::string to_string(SamplerKind k) { return k == SamplerKind::kController ? "controller" : "random"; }

SamplerKind parse_sampler(const std::string& s) {
  if (s == "controller") return SamplerKind::kController;
  if (s == "random") return SamplerKind::kRandom;
  throw ConfigError("unknown sampler '" + s + "' (expected controller or random)");
}

void SearchConfig::validate() const {
  model.validate();
  auto at_least = [](int v, int lo, const char* name) {
    if (v < lo) throw ConfigError(std::string("search: ") + name + " must be >= " + std::to_string(lo));
  };
  at_least(levels, 1, "levels");
  at_least(meta_iterations, 1, "meta_iterations");
  at_least(shared_steps_per_iter, 1, "shared_steps_per_iter");
  at_least(controller_steps_per_iter, 1, "controller_steps_per_iter");
  at_least(controller_batch, 1, "controller_batch");
  at_least(candidates, 1, "candidates");
  at_least(monte_carlo, 1, "monte_carlo");
  at_least(warmup_steps, 0, "warmup_steps");
  at_least(shared_lr_decay_every, 0, "shared_lr_decay_every");
  at_least(controller_hidden, 1, "controller_hidden");
  at_least(fine_tune_epochs, 0, "fine_tune_epochs");
  at_least(batch_size, 1, "batch_size");
  at_least(reward_batch, 1, "reward_batch");
  if (p_min < 0 || p_min > 100) throw ConfigError("search: p_min must be in [0, 100]");
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("search: ") + name + " must be > 0");
  };
  positive(shared_lr, "shared_lr");
  positive(shared_lr_decay, "shared_lr_decay");
  positive(controller_lr, "controller_lr");
  positive(fine_tune_lr, "fine_tune_lr");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw ConfigError("search: baseline_decay must be in [0, 1)");
  if (model.transmission_points() < 1) throw ConfigError("search: the model has no transmission point");
}

ControllerConfig SearchConfig::controller_config() const {
  ControllerConfig c;
  c.nodes = model.partitions;
  c.levels = levels;
  c.p_min = p_min;
  c.alpha = model.alpha;
  c.hidden = controller_hidden;
  c.entropy_weight = entropy_weight;
  return c;
}

double SearchConfig::shared_lr_at(int iteration) const {
  if (shared_lr_decay_every <= 0) return shared_lr;
  return shared_lr * std::pow(shared_lr_decay, iteration / shared_lr_decay_every);
}

json search_config_to_json(const SearchConfig& c) {
  return {{"model", spec_to_json(c.model)},
          {"levels", c.levels},
          {"p_min", c.p_min},
          {"meta_iterations", c.meta_iterations},
          {"shared_steps_per_iter", c.shared_steps_per_iter},
          {"controller_steps_per_iter", c.controller_steps_per_iter},
          {"controller_batch", c.controller_batch},
          {"candidates", c.candidates},
          {"monte_carlo", c.monte_carlo},
          {"warmup_steps", c.warmup_steps},
          {"shared_lr", c.shared_lr},
          {"shared_lr_decay", c.shared_lr_decay},
          {"shared_lr_decay_every", c.shared_lr_decay_every},
          {"controller_lr", c.controller_lr},
          {"baseline_decay", c.baseline_decay},
          {"controller_hidden", c.controller_hidden},
          {"entropy_weight", c.entropy_weight},
          {"fine_tune_lr", c.fine_tune_lr},
          {"fine_tune_epochs", c.fine_tune_epochs},
          {"batch_size", c.batch_size},
          {"reward_batch", c.reward_batch},
          {"seed", c.seed},
          {"sampler", to_string(c.sampler)}};
}

PolicySampler uniform_sampler(int nodes, int alpha, int levels, int p_min, std::size_t steps) {
  const std::uint64_t choices = factorial(nodes);
  return [=](Rng& rng) {
    PolicySequence p{nodes, alpha, levels, p_min, {}};
    for (std::size_t t = 0; t < steps; ++t) {
      const int comm = static_cast<int>(rng.below(choices));
      const int sp = levels > 1 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(levels))) : 0;
      p.steps.push_back({comm, sp});
    }
    return p;
  };
}

double accuracy(const SepGraph& graph, const PolicySequence& policy, const Split& split, int begin, int n) {
  if (split.count() == 0) throw ConfigError("accuracy: empty split");
  if (n < 1) throw ConfigError("accuracy: need at least one image");
  std::vector<int> idx(n);
  for (int k = 0; k < n; ++k) idx[k] = (begin + k) % split.count();
  std::vector<int> labels;
  const Tensor4 x = split.batch(idx, &labels);
  const auto pred = argmax_rows(graph.infer(x, &policy));
  int ok = 0;
  for (int k = 0; k < n; ++k) ok += pred[k] == labels[k];
  return static_cast<double>(ok) / n;
}

double accuracy(const SepGraph& graph, const PolicySequence& policy, const Split& split, int chunk) {
  if (split.count() == 0) throw ConfigError("accuracy: empty split");
  double correct = 0.0;
  for (int b = 0; b < split.count(); b += chunk) {
    const int n = std::min(chunk, split.count() - b);
    correct += accuracy(graph, policy, split, b, n) * n;
  }
  return correct / split.count();
}

std::uint64_t graph_hash(SepGraph& graph) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::span<const float> v) {
    for (float f : v) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  };
  graph.visit([&](const std::string&, Param& p) { mix(p.value.data()); });
  graph.visit_buffers([&](const std::string&, Tensor4& t) { mix(t.data()); });
  return h;
}

double train_shared_weights(SepGraph& graph, const PolicySampler& sampler, const Split& train, int steps,
                            int batch_size, int monte_carlo, double lr, Rng& rng) {
  if (steps <= 0) return 0.0;
  if (train.count() == 0) throw ConfigError("train_shared_weights: empty training split");
  if (monte_carlo < 1 || batch_size < 1) throw ConfigError("train_shared_weights: bad batch or sample count");
  const auto params = graph.params();
  double total = 0.0;
  std::vector<int> idx(batch_size), labels;
  for (int s = 0; s < steps; ++s) {
    for (auto& i : idx) i = static_cast<int>(rng.below(static_cast<std::uint64_t>(train.count())));
    const Tensor4 x = train.batch(idx, &labels);
    graph.zero_grad();
    for (int m = 0; m < monte_carlo; ++m) {
      const PolicySequence p = sampler(rng);
      const Tensor4 logits = graph.forward(x, &p, Mode::kTrain);
      const SoftmaxCE ce = softmax_cross_entropy(logits, labels);
      graph.backward(ce.grad);
      total += ce.loss / monte_carlo;
    }
    if (monte_carlo > 1) {
      const float scale = 1.0f / static_cast<float>(monte_carlo);
      for (Param* p : params)
        for (float& g : p->grad.data()) g *= scale;
    }
    sgd_step(params, static_cast<float>(lr));
  }
  return total / steps;
}

double train_controller(Controller& ctl, const RewardFn& reward, std::size_t seq_len, int steps, int batch, double lr,
                        double decay, ControllerState& state, Rng& rng) {
  if (steps <= 0) return 0.0;
  double sum = 0.0;
  std::vector<ScoredPolicy> scored;
  std::vector<double> rewards;
  for (int s = 0; s < steps; ++s) {
    scored.clear();
    rewards.clear();
    for (int b = 0; b < batch; ++b) {
      PolicySequence p = ctl.sample(seq_len, rng).first;
      const double r = reward(p);
      if (!std::isfinite(r)) throw NumericError("train_controller: non-finite reward");
      scored.push_back({std::move(p), r});
      rewards.push_back(r);
      sum += r;
    }
    if (!state.baseline_ready) {
      // start the baseline at the first batch mean so the first update is unbiased in scale
      double mean = 0.0;
      for (double r : rewards) mean += r;
      state.baseline = mean / static_cast<double>(rewards.size());
      state.baseline_ready = true;
    }
    ctl.reinforce_update(scored, state.baseline, lr);
    state.baseline = baseline_update(state.baseline, rewards, decay);
  }
  return sum / (static_cast<double>(steps) * batch);
}

double train_controller(Controller& ctl, const SepGraph& graph, const Split& validation, const SearchConfig& cfg,
                        ControllerState& state, Rng& rng) {
  if (validation.count() == 0) throw ConfigError("train_controller: empty validation split");
  int cursor = state.val_cursor;
  const RewardFn reward = [&](const PolicySequence& p) {
    return accuracy(graph, p, validation, cursor, cfg.reward_batch);
  };
  // one validation mini-batch per controller step, shared by its policies
  double sum = 0.0;
  for (int s = 0; s < cfg.controller_steps_per_iter; ++s) {
    sum += train_controller(ctl, reward, cfg.seq_len(), 1, cfg.controller_batch, cfg.controller_lr, cfg.baseline_decay,
                            state, rng);
    cursor = (cursor + cfg.reward_batch) % validation.count();
  }
  state.val_cursor = cursor;
  return sum / cfg.controller_steps_per_iter;
}

Candidate sample_best(const PolicySampler& sampler, const RewardFn& score, const ModelSpec& spec, int n, Rng& rng,
                      std::vector<Candidate>* all) {
  if (n < 1) throw ConfigError("sample_best: need at least one candidate");
  Candidate best;
  bool have = false;
  for (int i = 0; i < n; ++i) {
    Candidate c;
    c.policy = sampler(rng);
    c.accuracy = score(c.policy);
    c.bytes = comm_volume(spec, &c.policy, WireDtype::kF32).payload_bytes;
    if (all) all->push_back(c);
    if (!have || c.accuracy > best.accuracy || (c.accuracy == best.accuracy && c.bytes < best.bytes)) {
      best = c;
      have = true;
    }
  }
  return best;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

json policy_ids(const PolicySequence& p) {
  json a = json::array();
  for (const auto& s : p.steps) a.push_back({s.comm_id, s.sparsity_id});
  return a;
}

IterationLog iteration_from_json(const json& j, const SearchConfig& cfg) {
  IterationLog it;
  it.iteration = j.at("iteration");
  it.shared_lr = j.at("shared_lr");
  it.shared_loss = j.at("loss");
  it.mean_reward = j.at("mean_reward").is_null() ? std::nan("") : j.at("mean_reward").get<double>();
  it.best_batch_accuracy = j.at("best_batch_accuracy");
  it.best_val_accuracy = j.at("best_accuracy");
  it.kept_best_accuracy = j.at("kept_best_accuracy");
  it.best_policy = PolicySequence{cfg.model.partitions, cfg.model.alpha, cfg.levels, cfg.p_min, {}};
  for (const auto& s : j.at("best_policy")) it.best_policy.steps.push_back({s.at(0), s.at(1)});
  it.graph_hash = std::stoull(j.at("graph_hash").get<std::string>(), nullptr, 16);
  it.controller_hash = std::stoull(j.at("controller_hash").get<std::string>(), nullptr, 16);
  return it;
}

}  // namespace

std::string IterationLog::to_json(SamplerKind sampler) const {
  json j{{"stage", "iteration"},
         {"sampler", snn::to_string(sampler)},
         {"iteration", iteration},
         {"shared_lr", shared_lr},
         {"loss", shared_loss},
         {"mean_reward", std::isnan(mean_reward) ? json(nullptr) : json(mean_reward)},
         {"best_batch_accuracy", best_batch_accuracy},
         {"best_accuracy", best_val_accuracy},
         {"kept_best_accuracy", kept_best_accuracy},
         {"best_policy", policy_ids(best_policy)},
         {"graph_hash", hex(graph_hash)},
         {"controller_hash", hex(controller_hash)}};
  return j.dump();
}

SepGraph warm_start_weights(const SearchConfig& cfg, const DatasetHandle& data) {
  cfg.validate();
  SepGraph g(cfg.model);
  Rng init = Rng(cfg.seed).fork(1);
  g.init(init);
  Rng rng = Rng(cfg.seed).fork(4);
  const auto sampler = uniform_sampler(cfg.model.partitions, cfg.model.alpha, cfg.levels, cfg.p_min, cfg.seq_len());
  train_shared_weights(g, sampler, data.train, cfg.warmup_steps, cfg.batch_size, cfg.monte_carlo, cfg.shared_lr, rng);
  return g;
}

double fine_tune(SepGraph& graph, const PolicySequence& policy, const Split& train, int epochs, int batch_size,
                 double lr, Rng& rng) {
  if (train.count() == 0) throw ConfigError("fine_tune: empty training split");
  const auto params = graph.params();
  std::vector<int> order(train.count());
  for (int i = 0; i < train.count(); ++i) order[i] = i;
  double epoch_loss = 0.0;
  std::vector<int> labels;
  for (int e = 0; e < epochs; ++e) {
    for (int i = train.count() - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    double sum = 0.0;
    int batches = 0;
    for (int b = 0; b + batch_size <= train.count(); b += batch_size) {
      const Tensor4 x = train.batch(std::span(order).subspan(b, batch_size), &labels);
      graph.zero_grad();
      const SoftmaxCE ce = softmax_cross_entropy(graph.forward(x, &policy, Mode::kTrain), labels);
      graph.backward(ce.grad);
      sgd_step(params, static_cast<float>(lr));
      sum += ce.loss;
      ++batches;
    }
    epoch_loss = batches ? sum / batches : 0.0;
  }
  return epoch_loss;
}

namespace {

struct SearchState {
  int next_iteration = 0;
  ControllerState ctl_state;
  double kept_accuracy = -1.0;
  PolicySequence kept_policy;
  std::vector<std::string> log_lines;
  std::vector<IterationLog> iterations;
};

void save_search(const std::string& path, const SearchConfig& cfg, SepGraph& graph, SepGraph& kept,
                 const std::optional<Controller>& ctl, const SearchState& st) {
  Checkpoint c;
  store_graph(c, graph, nullptr, "graph");
  store_graph(c, kept, &st.kept_policy, "best");
  if (ctl) store_controller(c, *ctl);
  json& s = c.role("search");
  s["config"] = search_config_to_json(cfg);
  s["next_iteration"] = st.next_iteration;
  s["baseline_ready"] = st.ctl_state.baseline_ready;
  s["val_cursor"] = st.ctl_state.val_cursor;
  s["kept_accuracy"] = st.kept_accuracy;
  s["log"] = st.log_lines;
  c.add_f64("search/baseline", {1}, std::span(&st.ctl_state.baseline, 1));
  save_checkpoint(path, c);
}

void load_search(const std::string& path, const SearchConfig& cfg, SepGraph& graph, SepGraph& kept,
                 std::optional<Controller>& ctl, SearchState& st) {
  const Checkpoint c = load_checkpoint(path);
  const json& s = c.role("search");
  if (s.at("config") != search_config_to_json(cfg)) {
    throw ConfigError("resume: " + path + " was written with a different search configuration");
  }
  restore_graph(c, graph, "graph");
  restore_graph(c, kept, "best");
  if (ctl) ctl = load_controller(c);
  st.next_iteration = s.at("next_iteration");
  c.read_f64("search/baseline", std::span(&st.ctl_state.baseline, 1));
  st.ctl_state.baseline_ready = s.at("baseline_ready");
  st.ctl_state.val_cursor = s.at("val_cursor");
  st.kept_accuracy = s.at("kept_accuracy");
  st.kept_policy = *load_attached_policy(c, "best");
  st.log_lines = s.at("log").get<std::vector<std::string>>();
  for (const auto& line : st.log_lines) st.iterations.push_back(iteration_from_json(json::parse(line), cfg));
}

}  // namespace

SearchArtifacts run_search(const SearchConfig& cfg, const DatasetHandle& data, const SearchOptions& opts) {
  cfg.validate();
  if (data.train.count() == 0) throw ConfigError("search: empty training split");
  if (data.validation.count() == 0) throw ConfigError("search: empty validation split");
  if (data.classes != cfg.model.num_classes) throw ConfigError("search: dataset classes differ from the model");
  if (data.train.size != cfg.model.in_height || data.train.size != cfg.model.in_width || cfg.model.in_channels != 3) {
    throw ConfigError("search: image size differs from the model input");
  }
  const Rng root(cfg.seed);
  SepGraph graph;
  if (opts.warm_start) {
    if (opts.warm_start->spec() != cfg.model) throw ConfigError("search: warm-start weights have a different spec");
    graph = *opts.warm_start;
  } else {
    graph = warm_start_weights(cfg, data);
  }
  std::optional<Controller> ctl;
  if (cfg.sampler == SamplerKind::kController) {
    Rng init = root.fork(2);
    ctl.emplace(cfg.controller_config(), init);
  }
  const PolicySampler uniform =
      uniform_sampler(cfg.model.partitions, cfg.model.alpha, cfg.levels, cfg.p_min, cfg.seq_len());
  const PolicySampler sampler = ctl ? PolicySampler([&](Rng& r) { return ctl->sample(cfg.seq_len(), r).first; })
                                    : uniform;
  SearchState st;
  SepGraph kept = graph;
  if (opts.resume && !opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    load_search(opts.checkpoint_path, cfg, graph, kept, ctl, st);
  }
  auto emit = [&](const std::string& line) {
    st.log_lines.push_back(line);
    if (opts.log_sink) opts.log_sink(line);
  };
  const Split& val = data.validation;

  for (int it = st.next_iteration; it < cfg.meta_iterations; ++it) {
    if (opts.stop_after >= 0 && it >= opts.stop_after) break;
    const Rng it_rng = root.fork(1000 + static_cast<std::uint64_t>(it));
    IterationLog log;
    log.iteration = it;
    log.shared_lr = cfg.shared_lr_at(it);

    // stage 1: shared weights; the controller must not move
    const std::uint64_t ctl_before = ctl ? params_hash(ctl->params()) : 0;
    Rng r1 = it_rng.fork(1);
    log.shared_loss = train_shared_weights(graph, sampler, data.train, cfg.shared_steps_per_iter, cfg.batch_size,
                                           cfg.monte_carlo, log.shared_lr, r1);
    if (ctl && params_hash(ctl->params()) != ctl_before) throw StateError("search: stage 1 changed the controller");

    // stage 2: controller; the shared weights must not move
    const std::uint64_t graph_before = graph_hash(graph);
    log.mean_reward = std::nan("");
    if (ctl) {
      Rng r2 = it_rng.fork(2);
      log.mean_reward = train_controller(*ctl, graph, val, cfg, st.ctl_state, r2);
      if (graph_hash(graph) != graph_before) throw StateError("search: stage 2 changed the shared weights");
    }

    // stage 3: candidates scored on one validation mini-batch
    const int cursor = st.ctl_state.val_cursor;
    st.ctl_state.val_cursor = (cursor + cfg.reward_batch) % val.count();
    Rng r3 = it_rng.fork(3);
    const Candidate best = sample_best(
        sampler, [&](const PolicySequence& p) { return accuracy(graph, p, val, cursor, cfg.reward_batch); }, cfg.model,
        cfg.candidates, r3);
    log.best_batch_accuracy = best.accuracy;
    log.best_policy = best.policy;
    log.best_val_accuracy = accuracy(graph, best.policy, val);
    if (log.best_val_accuracy > st.kept_accuracy) {
      st.kept_accuracy = log.best_val_accuracy;
      st.kept_policy = best.policy;
      kept = graph;
    }
    log.kept_best_accuracy = st.kept_accuracy;
    log.graph_hash = graph_hash(graph);
    log.controller_hash = ctl ? params_hash(ctl->params()) : 0;
    st.iterations.push_back(log);
    emit(log.to_json(cfg.sampler));
    st.next_iteration = it + 1;
    if (!opts.checkpoint_path.empty()) save_search(opts.checkpoint_path, cfg, graph, kept, ctl, st);
  }

  SearchArtifacts out;
  out.sampler = cfg.sampler;
  out.best_policy = st.kept_policy;
  out.best_val_accuracy = st.kept_accuracy;
  out.controller = ctl;
  out.iterations = st.iterations;
  out.graph = kept;
  const bool finished = st.next_iteration >= cfg.meta_iterations;
  if (finished && opts.fine_tune) {
    Rng r = root.fork(3);
    out.finetune_loss = fine_tune(out.graph, out.best_policy, data.train, cfg.fine_tune_epochs, cfg.batch_size,
                                  cfg.fine_tune_lr, r);
    out.finetune_val_accuracy = accuracy(out.graph, out.best_policy, val);
    if (data.test.count() > 0) out.test_accuracy = accuracy(out.graph, out.best_policy, data.test);
    json j{{"stage", "finetune"},
           {"sampler", to_string(cfg.sampler)},
           {"epochs", cfg.fine_tune_epochs},
           {"lr", cfg.fine_tune_lr},
           {"loss", out.finetune_loss},
           {"val_accuracy", out.finetune_val_accuracy},
           {"test_accuracy", out.test_accuracy},
           {"best_policy", policy_ids(out.best_policy)}};
    emit(j.dump());
  }
  out.log_lines = st.log_lines;
  return out;
}

SearchArtifacts random_search_baseline(SearchConfig cfg, const DatasetHandle& data, const SearchOptions& opts) {
  cfg.sampler = SamplerKind::kRandom;
  return run_search(cfg, data, opts);
}

}  // namespace snn
