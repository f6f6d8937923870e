// SPDX-License-Identifier: Apache-2.0
//
// snn: one entry point for building, searching, costing, deploying and
// reporting. Exit codes: 0 success, 1 usage, 2 runtime failure, 3 a check
// (verify-equivalence, feasibility) did not hold.
#include <signal.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <thread>

#include "snn/checkpoint.hpp"
#include "snn/config.hpp"
#include "snn/dataset.hpp"
#include "snn/error.hpp"
#include "snn/model.hpp"
#include "snn/perf_model.hpp"
#include "snn/policy.hpp"
#include "snn/report.hpp"
#include "snn/runtime.hpp"
#include "snn/search.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace snn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheck = 3;


struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const Globals& g, const std::string& command) {
  RunConfig c = load_run_config(g.config_path, g.sets);
  std::cerr << "# " << command << ": resolved config\n" << c.resolved_text();
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream f(p);
  if (!f) throw RuntimeFailure("cannot write " + p.string());
  f << text;
}

// Perf commands default to the published 56-layer 4x16d, G = 4 model.
struct PerfModelFlags {
  int depth = 56;
  int cardinality = 4;
  int width = 16;
  int partitions = 4;
  int alpha = 2;
  int classes = 100;

  void add(CLI::App* app) {
    app->add_option("--depth", depth, "Network depth (9n+2)")->capture_default_str();
    app->add_option("--cardinality", cardinality, "Groups C")->capture_default_str();
    app->add_option("--width", width, "Bottleneck width d")->capture_default_str();
    app->add_option("--partitions", partitions, "Nodes G")->capture_default_str();
    app->add_option("--alpha", alpha, "Blocks per transmission")->capture_default_str();
    app->add_option("--classes", classes, "Classifier outputs")->capture_default_str();
  }
  ModelSpec spec() const {
    ModelSpec s = ModelSpec::resnext(depth, cardinality, width, partitions, alpha, classes);
    s.validate();
    return s;
  }
  std::string text() const {
    std::ostringstream os;
    os << "perf.depth = " << depth << "\nperf.cardinality = " << cardinality << "\nperf.width = " << width
       << "\nperf.partitions = " << partitions << "\nperf.alpha = " << alpha << "\nperf.classes = " << classes << '\n';
    return os.str();
  }
};

std::optional<PolicySequence> policy_for(const std::string& path, bool published_best, WireDtype dtype) {
  if (!path.empty()) return load_policy(path);
  if (published_best) return published_policies()[dtype == WireDtype::kF16 ? 2 : 1];
  return std::nullopt;
}

// ------------------------------------------------------------------ build

int cmd_build(const RunConfig& c) {
  SepGraph g = c.model.partitions > 1 ? build_sep_resnext(c.model) : build_resnext(c.model);
  const ModelSpec plain_spec = plain_counterpart(c.model);
  SepGraph plain = build_resnext(plain_spec);
  std::int64_t formula = 0;
  for (const BlockGeometry& b : g.geometry()) {
    BlockFormula f;
    f.kind = c.model.partitions > 1 ? BlockFormula::Kind::kSeparable : BlockFormula::Kind::kResNeXt;
    f.m_in = b.in_per_partition;
    f.m_out = b.out_per_partition;
    f.cardinality = c.model.cardinality;
    f.width = b.stage_width;
    f.partitions = c.model.partitions;
    f.kernel = c.model.kernel;
    formula += count_params_formula(f);
  }
  const std::size_t enumerated = count_block_conv_weights(g);
  const std::size_t total = count_params_enumerated(g);
  const std::size_t plain_total = count_params_enumerated(plain);
  const FlopReport flops = count_flops(g);
  json j{{"spec", to_string(c.model)},
         {"block_conv_weights_enumerated", enumerated},
         {"block_conv_weights_formula", formula},
         {"formula_match", static_cast<std::int64_t>(enumerated) == formula},
         {"params_total", total},
         {"plain_params_total", plain_total},
         {"overhead_percent", 100.0 * (static_cast<double>(total) / static_cast<double>(plain_total) - 1.0)},
         {"partition_params", partition_param_counts(g)},
         {"flops", flops.total_flops()},
         {"transmission_points", g.transmission_count()}};
  std::cout << j.dump(2) << '\n';
  return static_cast<std::int64_t>(enumerated) == formula ? 0 : kExitCheck;
}

// ----------------------------------------------------------------- search

// [[comm_id, sparsity_id], ...], the same shape the run log uses
json policy_steps(const PolicySequence& p) {
  json out = json::array();
  for (const auto& st : p.steps) out.push_back({st.comm_id, st.sparsity_id});
  return out;
}

void save_search_outputs(const RunConfig& c, const SearchArtifacts& a, const std::string& tag) {
  const fs::path dir = c.output_dir;
  std::string log;
  for (const auto& l : a.log_lines) log += l + '\n';
  write_text(dir / (tag + "_log.jsonl"), log);
  write_text(dir / "resolved_config.txt", c.resolved_text());
  save_policy((dir / (tag + "_best.policy")).string(), a.best_policy);
  Checkpoint ck;
  SepGraph g = a.graph;
  store_graph(ck, g, &a.best_policy);
  ck.meta["config"] = c.resolved_text();
  save_checkpoint((dir / (tag + "_model.snnc")).string(), ck);
  std::cout << json{{"sampler", tag},
                    {"best_policy", policy_steps(a.best_policy)},
                    {"best_val_accuracy", a.best_val_accuracy},
                    {"finetune_val_accuracy", a.finetune_val_accuracy},
                    {"test_accuracy", a.test_accuracy},
                    {"outputs", dir.string()}}
                   .dump(2)
            << '\n';
}

int cmd_search(RunConfig c, bool random, bool resume, int stop_after) {
  c.search.sampler = random ? SamplerKind::kRandom : SamplerKind::kController;
  const DatasetHandle data = make_synthetic(c.dataset);
  const std::string tag = random ? "random" : "controller";
  const SepGraph warm = warm_start_weights(c.search, data);
  SearchOptions o;
  o.warm_start = &warm;
  o.checkpoint_path = c.checkpoint_path.empty() ? (fs::path(c.output_dir) / (tag + "_search.snnc")).string() : c.checkpoint_path;
  fs::create_directories(c.output_dir);
  o.resume = resume;
  o.stop_after = stop_after;
  o.log_sink = [](const std::string& l) { std::cerr << l << '\n'; };
  const SearchArtifacts a = random ? random_search_baseline(c.search, data, o) : run_search(c.search, data, o);
  save_search_outputs(c, a, tag);
  return 0;
}

std::pair<SepGraph, PolicySequence> load_model(const std::string& checkpoint, const std::string& policy_path) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(checkpoint);
  SepGraph g = load_graph(ck);
  std::optional<PolicySequence> p = load_attached_policy(ck);
  if (!policy_path.empty()) p = load_policy(policy_path);
  if (!p) throw ConfigError("no policy: the checkpoint has none attached and --policy was not given");
  return {std::move(g), *p};
}

int cmd_finetune(const RunConfig& c, const std::string& checkpoint, const std::string& policy_path) {
  auto [g, p] = load_model(checkpoint, policy_path);
  DatasetConfig dc = c.dataset;
  dc.size = g.spec().in_height;
  dc.classes = g.spec().num_classes;
  const DatasetHandle data = make_synthetic(dc);
  Rng rng = Rng(c.seed).fork(3);
  const double loss = fine_tune(g, p, data.train, c.search.fine_tune_epochs, c.search.batch_size, c.search.fine_tune_lr, rng);
  Checkpoint ck;
  store_graph(ck, g, &p);
  const fs::path out = fs::path(c.output_dir) / "finetuned.snnc";
  fs::create_directories(c.output_dir);
  save_checkpoint(out.string(), ck);
  std::cout << json{{"loss", loss},
                    {"val_accuracy", accuracy(g, p, data.validation)},
                    {"test_accuracy", accuracy(g, p, data.test)},
                    {"checkpoint", out.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

// ------------------------------------------------------------------- perf

int cmd_commcost(const PerfModelFlags& m, WireDtype dtype, const std::string& policy_path, bool table, bool as_json) {
  const ModelSpec spec = m.spec();
  std::cerr << "# commcost: resolved config\n" << m.text() << "wire.dtype = " << to_string(dtype) << '\n';
  if (table || policy_path.empty()) {
    // without a policy file the table uses the published sequences
    const auto policy = policy_for(policy_path, false, dtype);
    const auto rows = table6(spec, policy ? &*policy : nullptr, policy ? dtype : WireDtype::kF16);
    std::cout << (as_json ? table6_json(rows) + "\n" : table6_text(rows));
    return 0;
  }
  const PolicySequence policy = load_policy(policy_path);
  const CostReport r = comm_volume(spec, &policy, dtype);
  std::cout << (as_json ? r.to_json() + "\n" : r.to_csv());
  return 0;
}

json feasibility_json(const Feasibility& f) {
  json w = json::array();
  for (const auto& x : f.windows) w.push_back({{"step", x.step}, {"compute_s", x.compute_s}, {"transmit_s", x.transmit_s}});
  return {{"feasible", f.feasible}, {"margin", f.margin}, {"final_transfer_s", f.final_transfer_s}, {"windows", w}};
}

int cmd_simulate(const PerfModelFlags& m, ClusterSpec cl, WireDtype dtype, const std::string& policy_path,
                 bool published, bool timeline_only) {
  const ModelSpec spec = m.spec();
  cl.nodes = spec.partitions;
  cl.validate();
  std::cerr << "# resolved config\n" << m.text() << "cluster.flops = " << cl.flops_per_sec
            << "\ncluster.bandwidth = " << cl.bandwidth_bps << "\ncluster.overhead = " << cl.message_overhead_s
            << "\nwire.dtype = " << to_string(dtype) << '\n';
  const auto policy = policy_for(policy_path, published, dtype);
  const PolicySequence full = policy ? *policy : PolicySequence::uniform(spec.partitions, spec.alpha, spec.transmission_points(), 9);
  const Feasibility f = feasibility(cl, spec, &full, dtype);
  json out{{"policy", policy_steps(full)}, {"feasibility", feasibility_json(f)}};
  if (!timeline_only) out["timeline"] = json::parse(simulate_latency(cl, spec, &full, dtype).to_json());
  std::cout << out.dump(2) << '\n';
  return f.feasible ? 0 : kExitCheck;
}

// ---------------------------------------------------------------- runtime

std::vector<Endpoint> parse_peers(const std::string& list) {
  std::vector<Endpoint> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(Endpoint::parse(item));
  if (out.empty()) throw ConfigError("--peers is empty");
  return out;
}

std::vector<int> parse_nodes(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad node id '" + item + "'");
    }
  }
  return out;
}

int cmd_worker(const RunConfig& c, const std::string& checkpoint, const std::string& policy_path,
               const std::string& nodes, const std::string& peers) {
  auto [g, p] = load_model(checkpoint, policy_path);
  WorkerConfig w;
  w.nodes = parse_nodes(nodes);
  w.peers = parse_peers(peers);
  w.graph = std::make_shared<SepGraph>(std::move(g));
  w.policy = p;
  w.dtype = c.dtype;
  w.timeout_s = c.timeout_s;
  std::cerr << "worker: nodes " << nodes << " listening on " << w.peers.at(static_cast<std::size_t>(w.nodes.at(0))).str() << '\n';
  run_worker(w);
  return 0;
}

Tensor4 dataset_image(const RunConfig& c, const ModelSpec& spec, int index, int* label) {
  DatasetConfig dc = c.dataset;
  dc.size = spec.in_height;
  dc.classes = spec.num_classes;
  const DatasetHandle data = make_synthetic(dc);
  if (index < 0 || index >= data.test.count()) throw ConfigError("--index out of range");
  if (label) *label = data.test.labels[static_cast<std::size_t>(index)];
  return data.test.image(index);
}

int cmd_infer(const RunConfig& c, const std::string& checkpoint, const std::string& policy_path,
              const std::string& peers, int index, int repeat, bool shutdown) {
  auto [g, p] = load_model(checkpoint, policy_path);
  Coordinator coord({parse_peers(peers), policy_hash(p), c.timeout_s});
  int label = -1;
  const Tensor4 x = dataset_image(c, g.spec(), index, &label);
  for (int r = 0; r < repeat; ++r) {
    const InferResult res = coord.infer(x);
    json logits = json::array();
    for (float v : res.logits.data()) logits.push_back(v);
    std::cout << json{{"index", index}, {"label", label}, {"class", res.class_id}, {"logits", logits},
                      {"timing", res.timing.to_json()}}
                     .dump()
              << '\n';
  }
  if (shutdown) coord.shutdown_workers();
  return 0;
}

int cmd_verify(const RunConfig& c, const std::string& checkpoint, const std::string& policy_path, int inputs,
               double tolerance) {
  std::shared_ptr<SepGraph> g;
  PolicySequence p;
  if (!checkpoint.empty()) {
    auto [graph, policy] = load_model(checkpoint, policy_path);
    g = std::make_shared<SepGraph>(std::move(graph));
    p = policy;
  } else {
    // untrained model with a random policy; a few train-mode passes fill
    // the batchnorm statistics that inference needs
    g = std::make_shared<SepGraph>(c.model);
    Rng rng = Rng(c.seed).fork(1);
    g->init(rng);
    for (int i = 0; i < 3; ++i) {
      Tensor4 x({8, c.model.in_channels, c.model.in_height, c.model.in_width});
      for (float& v : x.data()) v = static_cast<float>(rng.normal());
      g->forward(x, nullptr, Mode::kTrain);
    }
    Rng pr = Rng(c.seed).fork(2);
    p = uniform_sampler(c.model.partitions, c.model.alpha, 9, 50, g->transmission_count())(pr);
  }
  if (g->partitions() < 2) throw ConfigError("verify-equivalence needs a separable model");
  const int nodes = g->partitions();
  Rng rng = Rng(c.seed).fork(5);
  std::vector<Tensor4> xs;
  for (int i = 0; i < inputs; ++i) {
    Tensor4 x({1, g->spec().in_channels, g->spec().in_height, g->spec().in_width});
    for (float& v : x.data()) v = static_cast<float>(rng.normal());
    xs.push_back(std::move(x));
  }

  auto deploy = [&](bool one_process) {
    const auto ports = free_ports(one_process ? 1 : nodes);
    std::vector<Endpoint> peers;
    for (int n = 0; n < nodes; ++n) peers.push_back({"127.0.0.1", ports[one_process ? 0 : static_cast<std::size_t>(n)]});
    std::vector<pid_t> pids;
    auto start = [&](std::vector<int> hosted) {
      WorkerConfig w;
      w.nodes = std::move(hosted);
      w.peers = peers;
      w.graph = g;
      w.policy = p;
      w.dtype = c.dtype;
      w.timeout_s = c.timeout_s;
      pids.push_back(spawn_worker(w));
    };
    if (one_process) {
      std::vector<int> all(static_cast<std::size_t>(nodes));
      for (int n = 0; n < nodes; ++n) all[static_cast<std::size_t>(n)] = n;
      start(all);
    } else {
      for (int n = 0; n < nodes; ++n) start({n});
    }
    std::vector<Tensor4> out;
    std::string error;
    {
      Coordinator coord({peers, policy_hash(p), c.timeout_s});
      try {
        for (const auto& x : xs) out.push_back(coord.infer(x).logits);
      } catch (const std::exception& e) {
        error = e.what();
      }
      coord.shutdown_workers();
    }
    for (pid_t pid : pids) {
      int st = 0;
      for (int i = 0; i < 300 && ::waitpid(pid, &st, WNOHANG) == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &st, WNOHANG);
    }
    if (!error.empty()) throw RuntimeFailure(error);
    return out;
  };

  const auto multi = deploy(false);
  const auto single = deploy(true);
  double worst = 0.0;
  bool bitwise = true;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor4 ref = single_process_reference(*g, p, xs[i], c.dtype);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      worst = std::max(worst, static_cast<double>(std::abs(multi[i][k] - ref[k])));
      bitwise = bitwise && multi[i][k] == single[i][k];
    }
  }
  const bool ok = worst <= tolerance && bitwise;
  std::cout << json{{"inputs", inputs},
                    {"nodes", nodes},
                    {"dtype", to_string(c.dtype)},
                    {"max_abs_diff_vs_reference", worst},
                    {"tolerance", tolerance},
                    {"one_process_bitwise_equal", bitwise},
                    {"pass", ok}}
                   .dump(2)
            << '\n';
  return ok ? 0 : kExitCheck;
}

int cmd_report(const std::vector<std::string>& logs, const std::vector<std::string>& labels, const std::string& out) {
  std::vector<RunLog> runs;
  for (std::size_t i = 0; i < logs.size(); ++i) runs.push_back(read_run_log(logs[i], i < labels.size() ? labels[i] : ""));
  const Report r = build_report(runs);
  const auto paths = write_report(r, out);
  std::cout << r.text();
  std::cerr << "wrote " << paths[0] << " and " << paths[1] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Separable ResNeXt: build, search, cost, deploy"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "Config file of key = value lines");
  app.add_option("--set", g.sets, "Override one key, key=value (repeatable)");
  app.fallthrough();

  auto* build = app.add_subcommand("build", "Build the graph and report parameter and FLOP counts");
  build->add_option("--spec", g.config_path, "Config file describing the model");

  auto* search = app.add_subcommand("search", "Controller-driven policy search");
  auto* rsearch = app.add_subcommand("random-search", "Random-sampler baseline search");
  bool resume = false;
  int stop_after = -1;
  for (auto* s : {search, rsearch}) {
    s->add_flag("--resume", resume, "Continue from the search checkpoint");
    s->add_option("--stop-after", stop_after, "Stop after this many meta-iterations (resumable)");
  }

  std::string checkpoint, policy_path;
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a checkpointed graph under its policy");
  finetune->add_option("--checkpoint", checkpoint, "Model checkpoint (graph with attached policy)")->required();
  finetune->add_option("--policy", policy_path, "Policy file overriding the attached one");

  PerfModelFlags perf;
  std::string dtype_name = "f32";
  bool table = false, as_json = false, published = false;
  auto* commcost = app.add_subcommand("commcost", "Communication volume against ring all-reduce");
  perf.add(commcost);
  commcost->add_option("--dtype", dtype_name, "Wire dtype f32|f16")->capture_default_str();
  commcost->add_option("--policy", policy_path, "Policy file");
  commcost->add_flag("--table6", table, "Table with the published policies");
  commcost->add_flag("--json", as_json, "JSON instead of text");

  ClusterSpec cluster;
  auto* simulate = app.add_subcommand("simulate", "Feasibility and event-level latency simulation");
  auto* feas = app.add_subcommand("feasibility", "Feasibility verdict and margin only");
  for (auto* s : {simulate, feas}) {
    perf.add(s);
    s->add_option("--flops", cluster.flops_per_sec, "FLOPS per node")->capture_default_str();
    s->add_option("--bandwidth", cluster.bandwidth_bps, "Link bandwidth, bits per second")->capture_default_str();
    s->add_option("--overhead", cluster.message_overhead_s, "Fixed cost per message, seconds")->capture_default_str();
    s->add_option("--dtype", dtype_name, "Wire dtype f32|f16")->capture_default_str();
    s->add_option("--policy", policy_path, "Policy file (default: send everything every step)");
    s->add_flag("--published", published, "Use the published sparse policy for the dtype");
  }

  std::string nodes = "0", peers;
  auto* worker = app.add_subcommand("worker", "Serve one or more partitions over TCP");
  worker->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  worker->add_option("--policy", policy_path, "Policy file overriding the attached one");
  worker->add_option("--nodes", nodes, "Hosted node ids, comma separated")->capture_default_str();
  worker->add_option("--peers", peers, "host:port of every node, comma separated")->required();

  int index = 0, repeat = 1;
  bool stop_workers = false;
  auto* infer = app.add_subcommand("infer", "Classify one test image on running workers");
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  infer->add_option("--policy", policy_path, "Policy file overriding the attached one");
  infer->add_option("--peers", peers, "host:port of every node, comma separated")->required();
  infer->add_option("--index", index, "Test image index")->capture_default_str();
  infer->add_option("--repeat", repeat, "Times to run the image")->capture_default_str();
  infer->add_flag("--shutdown", stop_workers, "Stop the workers afterwards");

  int inputs = 100;
  double tolerance = 1e-5;
  auto* verify = app.add_subcommand("verify-equivalence", "Loopback deployment against the single-process reference");
  verify->add_option("--checkpoint", checkpoint, "Model checkpoint (default: random desk-scale model)");
  verify->add_option("--policy", policy_path, "Policy file overriding the attached one");
  verify->add_option("--inputs", inputs, "Random inputs")->capture_default_str();
  verify->add_option("--tolerance", tolerance, "Max abs logit difference")->capture_default_str();

  std::vector<std::string> logs, labels;
  std::string out_dir;
  auto* report = app.add_subcommand("report", "Merge search logs into JSON and CSV curves");
  report->add_option("logs", logs, "JSON-lines search logs")->required();
  report->add_option("--label", labels, "Series label per log (default: file stem)");
  report->add_option("--out", out_dir, "Output directory (default: output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    const WireDtype dtype = parse_dtype(dtype_name);
    if (*build) return cmd_build(resolve_config(g, "build"));
    if (*search) return cmd_search(resolve_config(g, "search"), false, resume, stop_after);
    if (*rsearch) return cmd_search(resolve_config(g, "random-search"), true, resume, stop_after);
    if (*finetune) return cmd_finetune(resolve_config(g, "finetune"), checkpoint, policy_path);
    if (*commcost) return cmd_commcost(perf, dtype, policy_path, table, as_json);
    if (*simulate || *feas) {
      RunConfig c = resolve_config(g, *simulate ? "simulate" : "feasibility");
      // flags left at their defaults fall back to the config's cluster
      for (auto* s : {simulate, feas}) {
        if (!*s) continue;
        if (s->count("--flops") == 0) cluster.flops_per_sec = c.cluster.flops_per_sec;
        if (s->count("--bandwidth") == 0) cluster.bandwidth_bps = c.cluster.bandwidth_bps;
        if (s->count("--overhead") == 0) cluster.message_overhead_s = c.cluster.message_overhead_s;
      }
      return cmd_simulate(perf, cluster, dtype, policy_path, published, bool(*feas));
    }
    if (*worker) return cmd_worker(resolve_config(g, "worker"), checkpoint, policy_path, nodes, peers);
    if (*infer) return cmd_infer(resolve_config(g, "infer"), checkpoint, policy_path, peers, index, repeat, stop_workers);
    if (*verify) return cmd_verify(resolve_config(g, "verify-equivalence"), checkpoint, policy_path, inputs, tolerance);
    if (*report) {
      const RunConfig c = resolve_config(g, "report");
      return cmd_report(logs, labels, out_dir.empty() ? c.output_dir : out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
