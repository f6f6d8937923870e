// SPDX-License-Identifier: Apache-2.0
#include "snn/controller.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "snn/error.hpp"

namespace snn {

void ControllerConfig::validate() const {
  if (nodes < 1 || nodes > kMaxNodes) throw ConfigError("controller: nodes out of range");
  if (factorial(nodes) > 100000) throw ConfigError("controller: G! too large for a dense comm head");
  if (levels < 1) throw ConfigError("controller: levels must be >= 1");
  if (hidden < 1) throw ConfigError("controller: hidden must be >= 1");
  if (!(init_range >= 0.0)) throw ConfigError("controller: init_range must be >= 0");
  if (!std::isfinite(entropy_weight)) throw ConfigError("controller: entropy_weight must be finite");
}

void ControllerParams::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("embed", embed);
  fn("lstm.w_x", w_x);
  fn("lstm.w_h", w_h);
  fn("lstm.bias", bias);
  fn("comm.w", comm_w);
  fn("comm.b", comm_b);
  fn("sparsity.w", sp_w);
  fn("sparsity.b", sp_b);
}

void ControllerParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ControllerParams*>(this)->visit([&](const std::string& n, Matrix& m) { fn(n, m); });
}

std::size_t ControllerParams::size() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += m.v.size(); });
  return n;
}

bool ControllerParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) {
    for (double x : m.v) ok = ok && std::isfinite(x);
  });
  return ok;
}

Controller::Controller(const ControllerConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int h = cfg.hidden;
  const int comm = static_cast<int>(factorial(cfg.nodes));
  params_.embed = Matrix(1 + comm + cfg.levels, h);
  params_.w_x = Matrix(4 * h, h);
  params_.w_h = Matrix(4 * h, h);
  params_.bias = Matrix(4 * h, 1);
  params_.comm_w = Matrix(comm, h);
  params_.comm_b = Matrix(comm, 1);
  params_.sp_w = Matrix(cfg.levels, h);
  params_.sp_b = Matrix(cfg.levels, 1);
  if (!cfg.zero_init) {
    params_.visit([&](const std::string&, Matrix& m) {
      for (double& x : m.v) x = rng.uniform(-cfg.init_range, cfg.init_range);
    });
  }
}

ControllerParams Controller::zero_like() const {
  ControllerParams z = params_;
  z.visit([](const std::string&, Matrix& m) { std::fill(m.v.begin(), m.v.end(), 0.0); });
  return z;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Everything backward needs from one sub-step.
struct Cell {
  SubDecision::Kind kind;
  int token_in;
  std::vector<double> h_prev, c_prev;
  std::vector<double> i, f, g, o, c, tanh_c, h;
  std::vector<double> probs;
  int chosen = 0;
};

void softmax_inplace(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : z) v /= s;
}

double entropy_of(const std::vector<double>& p) {
  double e = 0.0;
  for (double q : p)
    if (q > 0.0) e -= q * std::log(q);
  return e;
}

using Chooser = std::function<int(SubDecision::Kind, std::size_t step, const std::vector<double>& probs)>;

// Runs the LSTM over seq_len transmission steps. `choose` picks each token.
std::vector<Cell> rollout(const ControllerParams& p, const ControllerConfig& cfg, int comm_choices,
                          std::size_t seq_len, const Chooser& choose) {
  const int hs = cfg.hidden;
  std::vector<Cell> cells;
  std::vector<double> h(hs, 0.0), c(hs, 0.0);
  int token = 0;
  std::vector<double> z(4 * hs);
  auto step = [&](SubDecision::Kind kind, std::size_t t) {
    Cell cell;
    cell.kind = kind;
    cell.token_in = token;
    cell.h_prev = h;
    cell.c_prev = c;
    const double* x = &p.embed.v[static_cast<std::size_t>(token) * hs];
    for (int r = 0; r < 4 * hs; ++r) {
      double acc = p.bias.v[r];
      const double* wx = &p.w_x.v[static_cast<std::size_t>(r) * hs];
      const double* wh = &p.w_h.v[static_cast<std::size_t>(r) * hs];
      for (int k = 0; k < hs; ++k) acc += wx[k] * x[k] + wh[k] * h[k];
      z[r] = acc;
    }
    cell.i.resize(hs);
    cell.f.resize(hs);
    cell.g.resize(hs);
    cell.o.resize(hs);
    cell.c.resize(hs);
    cell.tanh_c.resize(hs);
    cell.h.resize(hs);
    for (int k = 0; k < hs; ++k) {
      cell.i[k] = sigmoid(z[k]);
      cell.f[k] = sigmoid(z[hs + k]);
      cell.g[k] = std::tanh(z[2 * hs + k]);
      cell.o[k] = sigmoid(z[3 * hs + k]);
      cell.c[k] = cell.f[k] * c[k] + cell.i[k] * cell.g[k];
      cell.tanh_c[k] = std::tanh(cell.c[k]);
      cell.h[k] = cell.o[k] * cell.tanh_c[k];
    }
    h = cell.h;
    c = cell.c;
    const Matrix& w = kind == SubDecision::Kind::kComm ? p.comm_w : p.sp_w;
    const Matrix& b = kind == SubDecision::Kind::kComm ? p.comm_b : p.sp_b;
    cell.probs.resize(w.rows);
    for (int r = 0; r < w.rows; ++r) {
      double acc = b.v[r];
      for (int k = 0; k < hs; ++k) acc += w(r, k) * h[k];
      cell.probs[r] = acc;
    }
    softmax_inplace(cell.probs);
    cell.chosen = choose(kind, t, cell.probs);
    token = kind == SubDecision::Kind::kComm ? 1 + cell.chosen : 1 + comm_choices + cell.chosen;
    cells.push_back(std::move(cell));
  };
  for (std::size_t t = 0; t < seq_len; ++t) {
    step(SubDecision::Kind::kComm, t);
    if (cfg.levels > 1) step(SubDecision::Kind::kSparsity, t);
  }
  return cells;
}

PolicySequence to_policy(const std::vector<Cell>& cells, const ControllerConfig& cfg) {
  PolicySequence p;
  p.nodes = cfg.nodes;
  p.alpha = cfg.alpha;
  p.levels = cfg.levels;
  p.p_min = cfg.p_min;
  for (const Cell& c : cells) {
    if (c.kind == SubDecision::Kind::kComm) {
      // Kl = 1 means every chunk is sent whole
      p.steps.push_back({c.chosen, cfg.levels - 1});
    } else {
      p.steps.back().sparsity_id = c.chosen;
    }
  }
  return p;
}

Chooser teacher(const PolicySequence& p) {
  return [&p](SubDecision::Kind kind, std::size_t t, const std::vector<double>&) {
    return kind == SubDecision::Kind::kComm ? p.steps[t].comm_id : p.steps[t].sparsity_id;
  };
}

}  // namespace

void Controller::check_policy(const PolicySequence& p) const {
  if (p.nodes != cfg_.nodes || p.levels != cfg_.levels) {
    throw ConfigError("controller: policy shape does not match the controller (G or Kl)");
  }
  for (const auto& s : p.steps) {
    if (s.comm_id < 0 || s.comm_id >= comm_choices()) throw ConfigError("controller: comm ID out of range");
    if (s.sparsity_id < 0 || s.sparsity_id >= cfg_.levels) throw ConfigError("controller: sparsity ID out of range");
  }
}

std::pair<PolicySequence, SampleTrace> Controller::sample(std::size_t seq_len, Rng& rng) const {
  if (seq_len < 1) throw ConfigError("controller: seq_len must be >= 1");
  const auto cells = rollout(params_, cfg_, comm_choices(), seq_len,
                                     [&](SubDecision::Kind, std::size_t, const std::vector<double>& probs) {
                                       const double u = rng.uniform();
                                       double acc = 0.0;
                                       for (std::size_t k = 0; k < probs.size(); ++k) {
                                         acc += probs[k];
                                         if (u < acc) return static_cast<int>(k);
                                       }
                                       return static_cast<int>(probs.size()) - 1;
                                     });
  SampleTrace trace;
  for (const Cell& c : cells) {
    const double lp = std::log(c.probs[c.chosen]);
    trace.steps.push_back({c.kind, c.chosen, lp, entropy_of(c.probs)});
    trace.total_log_prob += lp;
  }
  return {to_policy(cells, cfg_), trace};
}

PolicySequence Controller::greedy(std::size_t seq_len) const {
  const auto cells = rollout(params_, cfg_, comm_choices(), seq_len,
                                     [](SubDecision::Kind, std::size_t, const std::vector<double>& probs) {
                                       return static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                                               probs.begin());
                                     });
  return to_policy(cells, cfg_);
}

double Controller::log_prob(const PolicySequence& p) const {
  check_policy(p);
  double lp = 0.0;
  for (const Cell& c : rollout(params_, cfg_, comm_choices(), p.size(), teacher(p))) {
    lp += std::log(c.probs[c.chosen]);
  }
  return lp;
}

std::vector<std::vector<double>> Controller::distributions(const PolicySequence& p) const {
  check_policy(p);
  std::vector<std::vector<double>> out;
  for (const Cell& c : rollout(params_, cfg_, comm_choices(), p.size(), teacher(p))) out.push_back(c.probs);
  return out;
}

void Controller::accumulate_gradient(const PolicySequence& p, double weight, ControllerParams& grad) const {
  check_policy(p);
  const auto cells = rollout(params_, cfg_, comm_choices(), p.size(), teacher(p));
  const int hs = cfg_.hidden;
  const double beta = cfg_.entropy_weight;
  std::vector<double> dh(hs, 0.0), dc(hs, 0.0), dz(4 * hs), dlogit;
  for (std::size_t n = cells.size(); n-- > 0;) {
    const Cell& cell = cells[n];
    const bool comm = cell.kind == SubDecision::Kind::kComm;
    const Matrix& w = comm ? params_.comm_w : params_.sp_w;
    Matrix& gw = comm ? grad.comm_w : grad.sp_w;
    Matrix& gb = comm ? grad.comm_b : grad.sp_b;

    // d/dlogits of weight*log p[a] + beta*H
    const double ent = entropy_of(cell.probs);
    dlogit.assign(cell.probs.size(), 0.0);
    for (std::size_t k = 0; k < cell.probs.size(); ++k) {
      const double pk = cell.probs[k];
      dlogit[k] = weight * ((static_cast<int>(k) == cell.chosen ? 1.0 : 0.0) - pk);
      if (beta != 0.0 && pk > 0.0) dlogit[k] += beta * (-pk * (std::log(pk) + ent));
    }
    for (int r = 0; r < w.rows; ++r) {
      gb.v[r] += dlogit[r];
      for (int k = 0; k < hs; ++k) {
        gw(r, k) += dlogit[r] * cell.h[k];
        dh[k] += w(r, k) * dlogit[r];
      }
    }

    for (int k = 0; k < hs; ++k) {
      const double dct = dc[k] + dh[k] * cell.o[k] * (1.0 - cell.tanh_c[k] * cell.tanh_c[k]);
      const double d_o = dh[k] * cell.tanh_c[k];
      const double d_i = dct * cell.g[k];
      const double d_g = dct * cell.i[k];
      const double d_f = dct * cell.c_prev[k];
      dz[k] = d_i * cell.i[k] * (1.0 - cell.i[k]);
      dz[hs + k] = d_f * cell.f[k] * (1.0 - cell.f[k]);
      dz[2 * hs + k] = d_g * (1.0 - cell.g[k] * cell.g[k]);
      dz[3 * hs + k] = d_o * cell.o[k] * (1.0 - cell.o[k]);
      dc[k] = dct * cell.f[k];
    }
    const double* x = &params_.embed.v[static_cast<std::size_t>(cell.token_in) * hs];
    double* gx = &grad.embed.v[static_cast<std::size_t>(cell.token_in) * hs];
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int r = 0; r < 4 * hs; ++r) {
      const double d = dz[r];
      if (d == 0.0) continue;
      grad.bias.v[r] += d;
      const std::size_t row = static_cast<std::size_t>(r) * hs;
      for (int k = 0; k < hs; ++k) {
        grad.w_x.v[row + k] += d * x[k];
        grad.w_h.v[row + k] += d * cell.h_prev[k];
        gx[k] += params_.w_x.v[row + k] * d;
        dh[k] += params_.w_h.v[row + k] * d;
      }
    }
  }
}

void Controller::reinforce_update(const std::vector<ScoredPolicy>& batch, double baseline, double lr) {
  if (batch.empty()) throw ConfigError("controller: empty REINFORCE batch");
  if (!std::isfinite(baseline) || !std::isfinite(lr)) throw NumericError("controller: non-finite baseline or lr");
  for (const auto& s : batch) {
    if (!std::isfinite(s.reward)) throw NumericError("controller: non-finite reward");
  }
  ControllerParams grad = zero_like();
  for (const auto& s : batch) accumulate_gradient(s.policy, s.reward - baseline, grad);
  std::vector<Matrix*> dst, src;
  params_.visit([&](const std::string&, Matrix& m) { dst.push_back(&m); });
  grad.visit([&](const std::string&, Matrix& m) { src.push_back(&m); });
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t k = 0; k < dst[i]->v.size(); ++k) dst[i]->v[k] += lr * src[i]->v[k];
  }
  if (!params_.all_finite()) throw NumericError("controller: update produced non-finite weights");
}

double baseline_update(double baseline, const std::vector<double>& rewards, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("baseline decay must be in [0, 1)");
  if (rewards.empty()) return baseline;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  return decay * baseline + (1.0 - decay) * mean;
}

std::uint64_t params_hash(const ControllerParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  p.visit([&](const std::string&, const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.v.data());
    for (std::size_t i = 0; i < m.v.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

}  // namespace snn
