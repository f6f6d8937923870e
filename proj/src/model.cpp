// SPDX-License-Identifier: Apache-2.0
#include "snn/model.hpp"

#include <sstream>

#include "snn/error.hpp"
#include "snn/half.hpp"

namespace snn {

// ------------------------------------------------------------- ModelSpec

void ModelSpec::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model spec: ") + name + " must be >= 1, got " + std::to_string(v));
  };
  positive(stages, "stages");
  positive(blocks_per_stage, "blocks_per_stage");
  positive(cardinality, "cardinality");
  positive(bottleneck_width, "bottleneck_width");
  positive(kernel, "kernel");
  positive(partitions, "partitions");
  positive(num_classes, "num_classes");
  positive(alpha, "alpha");
  positive(in_channels, "in_channels");
  positive(in_height, "in_height");
  positive(in_width, "in_width");
  positive(stem_channels, "stem_channels");
  positive(base_width, "base_width");
  if (kernel % 2 == 0) throw ConfigError("model spec: kernel must be odd for same padding");
  if (cardinality % partitions != 0) {
    throw ConfigError("model spec: partitions G=" + std::to_string(partitions) + " does not divide cardinality C=" +
                      std::to_string(cardinality));
  }
  if (partitions > kMaxNodes) throw ConfigError("model spec: too many partitions");
  if (stages > 16) throw ConfigError("model spec: too many stages");
}

ModelSpec ModelSpec::resnext(int depth, int cardinality, int width, int partitions, int alpha, int num_classes) {
  if (depth < 11 || (depth - 2) % 9 != 0) {
    throw ConfigError("resnext depth must be 9*n+2 (e.g. 56, 110), got " + std::to_string(depth));
  }
  ModelSpec s;
  s.blocks_per_stage = (depth - 2) / 9;
  s.cardinality = cardinality;
  s.bottleneck_width = width;
  s.partitions = partitions;
  s.alpha = alpha;
  s.num_classes = num_classes;
  return s;
}

std::string to_string(const ModelSpec& s) {
  std::ostringstream os;
  os << "depth=" << s.depth() << " stages=" << s.stages << " blocks_per_stage=" << s.blocks_per_stage << " C="
     << s.cardinality << " d=" << s.bottleneck_width << " G=" << s.partitions << " alpha=" << s.alpha
     << " classes=" << s.num_classes << " input=" << s.in_channels << "x" << s.in_height << "x" << s.in_width
     << " stem=" << s.stem_channels << " base_width=" << s.base_width;
  return os.str();
}

std::vector<BlockGeometry> block_geometry(const ModelSpec& spec) {
  spec.validate();
  std::vector<BlockGeometry> out;
  const int g = spec.partitions;
  int in_pp = spec.stem_channels;
  int h = spec.in_height;
  int w = spec.in_width;
  for (int s = 0; s < spec.stages; ++s) {
    const int width = spec.bottleneck_width << s;
    const int out_pp = spec.base_width << s;
    for (int j = 0; j < spec.blocks_per_stage; ++j) {
      BlockGeometry b;
      b.stage = s;
      b.index = static_cast<int>(out.size());
      b.in_per_partition = in_pp;
      b.out_per_partition = out_pp;
      b.stage_width = width;
      b.inner = spec.cardinality * width;
      b.stride = (s > 0 && j == 0) ? 2 : 1;
      b.projection = b.stride != 1 || in_pp != out_pp;
      b.input = {1, g * in_pp, h, w};
      h = (h - 1) / b.stride + 1;
      w = (w - 1) / b.stride + 1;
      b.output = {1, g * out_pp, h, w};
      out.push_back(b);
      in_pp = out_pp;
    }
  }
  return out;
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(const BlockGeometry& geo, int cardinality, int partitions, int kernel)
    : conv1_(partitions * geo.in_per_partition, geo.inner, 1, 1, partitions),
      conv2_(geo.inner, geo.inner, kernel, geo.stride, cardinality),
      conv3_(geo.inner, partitions * geo.out_per_partition, 1, 1, partitions),
      bn1_(geo.inner),
      bn2_(geo.inner),
      bn3_(partitions * geo.out_per_partition),
      projection_(geo.projection) {
  if (projection_) {
    proj_ = Conv2d(partitions * geo.in_per_partition, partitions * geo.out_per_partition, 1, geo.stride, partitions);
    proj_bn_ = BatchNorm2d(partitions * geo.out_per_partition);
  }
}

Tensor4 Bottleneck::forward(const Tensor4& x, Mode mode) {
  a1_ = relu(bn1_.forward(conv1_.forward(x), mode));
  a2_ = relu(bn2_.forward(conv2_.forward(a1_), mode));
  Tensor4 y = bn3_.forward(conv3_.forward(a2_), mode);
  if (projection_) {
    const Tensor4 sc = proj_bn_.forward(proj_.forward(x), mode);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sc[i];
  } else {
    expect_shape(x.shape(), y.shape(), "bottleneck identity shortcut");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  }
  out_ = relu(y);
  recorded_ = true;
  return out_;
}

Tensor4 Bottleneck::infer(const Tensor4& x) const {
  const Tensor4 a1 = relu(bn1_.infer(conv1_.infer(x)));
  const Tensor4 a2 = relu(bn2_.infer(conv2_.infer(a1)));
  Tensor4 y = bn3_.infer(conv3_.infer(a2));
  if (projection_) {
    const Tensor4 sc = proj_bn_.infer(proj_.infer(x));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sc[i];
  } else {
    expect_shape(x.shape(), y.shape(), "bottleneck identity shortcut");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  }
  return relu(y);
}

Tensor4 Bottleneck::backward(const Tensor4& grad_out) {
  if (!recorded_) throw StateError("bottleneck: backward called without a recorded forward pass");
  const Tensor4 g = relu_backward(out_, grad_out);
  Tensor4 d = bn3_.backward(g);
  d = conv3_.backward(d);
  d = relu_backward(a2_, d);
  d = bn2_.backward(d);
  d = conv2_.backward(d);
  d = relu_backward(a1_, d);
  d = bn1_.backward(d);
  Tensor4 dx = conv1_.backward(d);
  if (projection_) {
    const Tensor4 ds = proj_.backward(proj_bn_.backward(g));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  }
  return dx;
}

void Bottleneck::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  if (projection_) proj_.init(rng);
}

void Bottleneck::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1_.visit(prefix + ".conv1", fn);
  bn1_.visit(prefix + ".bn1", fn);
  conv2_.visit(prefix + ".conv2", fn);
  bn2_.visit(prefix + ".bn2", fn);
  conv3_.visit(prefix + ".conv3", fn);
  bn3_.visit(prefix + ".bn3", fn);
  if (projection_) {
    proj_.visit(prefix + ".proj", fn);
    proj_bn_.visit(prefix + ".proj_bn", fn);
  }
}

void Bottleneck::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  bn1_.visit_buffers(prefix + ".bn1", fn);
  bn2_.visit_buffers(prefix + ".bn2", fn);
  bn3_.visit_buffers(prefix + ".bn3", fn);
  if (projection_) proj_bn_.visit_buffers(prefix + ".proj_bn", fn);
}

void Bottleneck::visit_batchnorms(const std::string& prefix, const BatchNormVisitor& fn) {
  fn(prefix + ".bn1", bn1_);
  fn(prefix + ".bn2", bn2_);
  fn(prefix + ".bn3", bn3_);
  if (projection_) fn(prefix + ".proj_bn", proj_bn_);
}

std::size_t Bottleneck::conv_weight_count() const {
  return conv1_.num_params() + conv2_.num_params() + conv3_.num_params();
}

std::size_t Bottleneck::param_count() const {
  std::size_t n = conv_weight_count() + bn1_.num_params() + bn2_.num_params() + bn3_.num_params();
  if (projection_) n += proj_.num_params() + proj_bn_.num_params();
  return n;
}

std::uint64_t Bottleneck::macs(const Shape4& in) const {
  const Shape4 s1 = conv1_.output_shape(in);
  const Shape4 s2 = conv2_.output_shape(s1);
  std::uint64_t m = conv1_.macs(in) + conv2_.macs(s1) + conv3_.macs(s2);
  if (projection_) m += proj_.macs(in);
  return m;
}

Bottleneck Bottleneck::slice_partition(int part, int parts) const {
  if (parts < 1 || part < 0 || part >= parts || conv1_.groups() != parts) {
    throw ConfigError("bottleneck: invalid partition slice");
  }
  const int c_per = conv2_.groups() / parts;
  const int inner_per = conv1_.out_channels() / parts;
  const int out_per = conv3_.out_channels() / parts;
  Bottleneck b;
  b.conv1_ = conv1_.slice_groups(part, 1);
  b.conv2_ = conv2_.slice_groups(part * c_per, c_per);
  b.conv3_ = conv3_.slice_groups(part, 1);
  b.bn1_ = bn1_.slice_channels(part * inner_per, inner_per);
  b.bn2_ = bn2_.slice_channels(part * inner_per, inner_per);
  b.bn3_ = bn3_.slice_channels(part * out_per, out_per);
  b.projection_ = projection_;
  if (projection_) {
    b.proj_ = proj_.slice_groups(part, 1);
    b.proj_bn_ = proj_bn_.slice_channels(part * out_per, out_per);
  }
  return b;
}

// ----------------------------------------------------- chunk transforms

Tensor4 adapt_chunk(const Tensor4& sent, const Shape4& target, int partitions) {
  if (sent.shape() == target) return sent;
  const int cs = sent.c() / partitions;
  const int ct = target.c / partitions;
  if (sent.n() != target.n || sent.c() % partitions || target.c % partitions || ct < cs || target.h == 0 ||
      target.w == 0 || sent.h() % target.h || sent.w() % target.w || sent.h() / target.h != sent.w() / target.w) {
    throw ShapeError("adapt_chunk: cannot map " + sent.shape().str() + " onto " + target.str());
  }
  const int f = sent.h() / target.h;
  const float inv = 1.0f / static_cast<float>(f * f);
  Tensor4 out(target);
  for (int b = 0; b < target.n; ++b) {
    for (int p = 0; p < partitions; ++p) {
      for (int k = 0; k < cs; ++k) {
        const float* src = sent.plane(b, p * cs + k);
        float* dst = out.plane(b, p * ct + k);
        for (int y = 0; y < target.h; ++y) {
          for (int x = 0; x < target.w; ++x) {
            float acc = 0.0f;
            for (int dy = 0; dy < f; ++dy) {
              for (int dx = 0; dx < f; ++dx) acc += src[(y * f + dy) * sent.w() + x * f + dx];
            }
            dst[y * target.w + x] = acc * inv;
          }
        }
      }
    }
  }
  return out;
}

Tensor4 adapt_chunk_backward(const Tensor4& grad_target, const Shape4& sent, int partitions) {
  if (grad_target.shape() == sent) return grad_target;
  const int cs = sent.c / partitions;
  const int ct = grad_target.c() / partitions;
  const int f = sent.h / grad_target.h();
  const float inv = 1.0f / static_cast<float>(f * f);
  Tensor4 out(sent);
  for (int b = 0; b < sent.n; ++b) {
    for (int p = 0; p < partitions; ++p) {
      for (int k = 0; k < cs; ++k) {
        const float* g = grad_target.plane(b, p * ct + k);
        float* dst = out.plane(b, p * cs + k);
        for (int y = 0; y < sent.h; ++y) {
          for (int x = 0; x < sent.w; ++x) dst[y * sent.w + x] = g[(y / f) * grad_target.w() + x / f] * inv;
        }
      }
    }
  }
  return out;
}

Tensor4 route_chunks(const Tensor4& x, const CommDecision& decision, int keep_channels, int partitions,
                     bool half_precision) {
  if (decision.nodes() != partitions) throw ConfigError("route_chunks: decision size does not match partitions");
  const int c = x.c() / partitions;
  if (keep_channels < 0 || keep_channels > c) throw ConfigError("route_chunks: keep_channels out of range");
  Tensor4 out(x.shape());
  const std::size_t plane = x.shape().plane();
  for (int i = 0; i < partitions; ++i) {
    const int j = decision.dest[i];
    if (j == i) continue;
    for (int b = 0; b < x.n(); ++b) {
      for (int k = 0; k < keep_channels; ++k) {
        const float* src = x.plane(b, i * c + k);
        float* dst = out.plane(b, j * c + k);
        if (half_precision) {
          for (std::size_t e = 0; e < plane; ++e) dst[e] = round_through_half(src[e]);
        } else {
          std::copy(src, src + plane, dst);
        }
      }
    }
  }
  return out;
}

Tensor4 route_chunks_backward(const Tensor4& grad, const CommDecision& decision, int keep_channels, int partitions) {
  const int c = grad.c() / partitions;
  Tensor4 out(grad.shape());
  const std::size_t plane = grad.shape().plane();
  for (int i = 0; i < partitions; ++i) {
    const int j = decision.dest[i];
    if (j == i) continue;
    for (int b = 0; b < grad.n(); ++b) {
      for (int k = 0; k < keep_channels; ++k) {
        const float* src = grad.plane(b, j * c + k);
        float* dst = out.plane(b, i * c + k);
        std::copy(src, src + plane, dst);
      }
    }
  }
  return out;
}

// -------------------------------------------------------------- SepGraph

SepGraph::SepGraph(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  geometry_ = block_geometry(spec_);
  schedule_ = transmission_schedule(spec_.total_blocks(), spec_.alpha);
  stem_conv_ = Conv2d(spec_.in_channels, spec_.stem_channels, spec_.kernel, 1, 1);
  stem_bn_ = BatchNorm2d(spec_.stem_channels);
  blocks_.reserve(geometry_.size());
  for (const auto& g : geometry_) blocks_.emplace_back(g, spec_.cardinality, spec_.partitions, spec_.kernel);
  fc_ = Linear(head_channels(), spec_.num_classes);
}

int SepGraph::head_channels() const noexcept { return geometry_.back().out_per_partition; }

void SepGraph::init(Rng& rng) {
  stem_conv_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  fc_.init(rng);
}

void SepGraph::check_policy(const PolicySequence* policy) const {
  if (!policy) return;
  if (policy->nodes != spec_.partitions) {
    throw ConfigError("policy is for G=" + std::to_string(policy->nodes) + " but the graph has G=" +
                      std::to_string(spec_.partitions));
  }
  if (policy->alpha != spec_.alpha) {
    throw ConfigError("policy alpha " + std::to_string(policy->alpha) + " does not match graph alpha " +
                      std::to_string(spec_.alpha));
  }
  policy->validate(schedule_.size());
}

namespace {

Tensor4 duplicate(const Tensor4& x, int copies) {
  if (copies == 1) return x;
  std::vector<Tensor4> parts(copies, x);
  return concat_channels(parts);
}

void add_into(Tensor4& x, const Tensor4& d) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += d[i];
}

}  // namespace

Tensor4 SepGraph::forward(const Tensor4& input, const PolicySequence* policy, Mode mode, WireOptions wire) {
  check_policy(policy);
  expect_shape(input.shape(), {input.n(), spec_.in_channels, spec_.in_height, spec_.in_width}, "graph input");
  Tape tape;
  tape.input = input.shape();
  tape.stem_out = relu(stem_bn_.forward(stem_conv_.forward(input), mode));
  tape.aggregated.assign(schedule_.size(), std::nullopt);
  Tensor4 x = duplicate(tape.stem_out, spec_.partitions);

  std::optional<Tensor4> pending;
  std::size_t point = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b].forward(x, mode);
    if (point < schedule_.size() && schedule_[point] == static_cast<int>(b) + 1) {
      if (pending) {
        tape.aggregated[point] = pending->shape();
        add_into(x, adapt_chunk(*pending, x.shape(), spec_.partitions));
        pending.reset();
      }
      if (policy) {
        const CommDecision dec = policy->decision(point);
        const int keep = n_send(geometry_[b].out_per_partition, policy->sparsity(point));
        if (dec.senders() > 0) pending = route_chunks(x, dec, keep, spec_.partitions, wire.half_precision);
        tape.decisions.push_back(dec);
        tape.keep.push_back(keep);
      }
      ++point;
    }
  }
  if (pending) {
    tape.final_aggregated = pending->shape();
    add_into(x, adapt_chunk(*pending, x.shape(), spec_.partitions));
  }
  tape.body_out = x.shape();
  const Tensor4 kept = x.slice_channels(0, head_channels());
  const Tensor4 logits = fc_.forward(global_avg_pool(kept));
  tape_ = std::move(tape);
  return logits;
}

Tensor4 SepGraph::infer(const Tensor4& input, const PolicySequence* policy, WireOptions wire) const {
  check_policy(policy);
  expect_shape(input.shape(), {input.n(), spec_.in_channels, spec_.in_height, spec_.in_width}, "graph input");
  Tensor4 x = duplicate(relu(stem_bn_.infer(stem_conv_.infer(input))), spec_.partitions);
  std::optional<Tensor4> pending;
  std::size_t point = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b].infer(x);
    if (point < schedule_.size() && schedule_[point] == static_cast<int>(b) + 1) {
      if (pending) {
        add_into(x, adapt_chunk(*pending, x.shape(), spec_.partitions));
        pending.reset();
      }
      if (policy) {
        const CommDecision dec = policy->decision(point);
        const int keep = n_send(geometry_[b].out_per_partition, policy->sparsity(point));
        if (dec.senders() > 0) pending = route_chunks(x, dec, keep, spec_.partitions, wire.half_precision);
      }
      ++point;
    }
  }
  if (pending) add_into(x, adapt_chunk(*pending, x.shape(), spec_.partitions));
  return fc_.infer(global_avg_pool(x.slice_channels(0, head_channels())));
}

void SepGraph::backward(const Tensor4& grad_logits) {
  if (!tape_) throw StateError("graph: backward called without a recorded forward pass");
  const Tape& tape = *tape_;
  const Tensor4 d_pooled = fc_.backward(grad_logits);
  const int hc = head_channels();
  Tensor4 g(tape.body_out);
  write_channels(g, global_avg_pool_backward({tape.body_out.n, hc, tape.body_out.h, tape.body_out.w}, d_pooled), 0);

  // gradient w.r.t. the chunk routed at the most recent transmission point
  std::optional<Tensor4> d_pending;
  if (tape.final_aggregated) d_pending = adapt_chunk_backward(g, *tape.final_aggregated, spec_.partitions);

  std::size_t point = schedule_.size();
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    if (point > 0 && schedule_[point - 1] == static_cast<int>(b) + 1) {
      --point;
      if (!tape.decisions.empty() && d_pending) {
        const Tensor4 dx = route_chunks_backward(*d_pending, tape.decisions[point], tape.keep[point], spec_.partitions);
        add_into(g, dx);
      }
      d_pending.reset();
      if (tape.aggregated[point]) d_pending = adapt_chunk_backward(g, *tape.aggregated[point], spec_.partitions);
    }
    g = blocks_[b].backward(g);
  }
  // the stem output was copied into every partition
  const int sc = spec_.stem_channels;
  Tensor4 ds({tape.input.n, sc, g.h(), g.w()});
  for (int p = 0; p < spec_.partitions; ++p) add_into(ds, g.slice_channels(p * sc, (p + 1) * sc));
  ds = relu_backward(tape.stem_out, ds);
  stem_conv_.backward(stem_bn_.backward(ds));
}

void SepGraph::visit(const ParamVisitor& fn) {
  stem_conv_.visit("stem.conv", fn);
  stem_bn_.visit("stem.bn", fn);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit("block" + std::to_string(b), fn);
  fc_.visit("head.fc", fn);
}

void SepGraph::visit_batchnorms(const BatchNormVisitor& fn) {
  fn("stem.bn", stem_bn_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit_batchnorms("block" + std::to_string(b), fn);
}

void SepGraph::visit_buffers(const BufferVisitor& fn) {
  stem_bn_.visit_buffers("stem.bn", fn);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit_buffers("block" + std::to_string(b), fn);
}

std::vector<Param*> SepGraph::params() {
  std::vector<Param*> out;
  visit([&](const std::string&, Param& p) { out.push_back(&p); });
  return out;
}

void SepGraph::zero_grad() {
  visit([](const std::string&, Param& p) { p.zero_grad(); });
}

// -------------------------------------------------------------- builders

SepGraph build_resnext(const ModelSpec& spec) {
  if (spec.partitions != 1) throw ConfigError("build_resnext: partitions must be 1 (use build_sep_resnext)");
  return SepGraph(spec);
}

SepGraph build_sep_resnext(const ModelSpec& spec) {
  if (spec.partitions < 2) throw ConfigError("build_sep_resnext: partitions must be >= 2");
  return SepGraph(spec);
}

std::size_t count_params_enumerated(SepGraph& graph) {
  std::size_t n = 0;
  graph.visit([&](const std::string&, Param& p) { n += p.value.size(); });
  return n;
}

std::size_t count_block_conv_weights(const SepGraph& graph) {
  std::size_t n = 0;
  for (const auto& b : graph.blocks()) n += b.conv_weight_count();
  return n;
}

std::vector<std::size_t> partition_param_counts(const SepGraph& graph) {
  const int g = graph.partitions();
  std::vector<std::size_t> counts(g + 1, 0);
  for (const auto& b : graph.blocks()) {
    if (g == 1) {
      counts[0] += b.param_count();
      continue;
    }
    for (int p = 0; p < g; ++p) counts[p] += b.slice_partition(p, g).param_count();
  }
  counts[g] = graph.stem_conv().num_params() + graph.stem_bn().num_params() + graph.head().num_params();
  return counts;
}

std::int64_t count_params_formula(const BlockFormula& f) {
  const std::int64_t k2 = f.kernel * f.kernel;
  const std::int64_t m_out = f.m_out > 0 ? f.m_out : f.m_in;
  switch (f.kind) {
    case BlockFormula::Kind::kPlain:
      return f.m_in * f.n + k2 * f.n * f.n + f.n * m_out;
    case BlockFormula::Kind::kResNeXt:
      return f.cardinality * (f.m_in * f.width + k2 * f.width * f.width + f.width * m_out);
    case BlockFormula::Kind::kSeparable:
      if (f.partitions < 1 || f.cardinality % f.partitions != 0) {
        throw ConfigError("count_params_formula: G must divide C");
      }
      return f.partitions * (f.cardinality / f.partitions) *
             (f.m_in * f.width + k2 * f.width * f.width + f.width * m_out);
  }
  return 0;
}

std::uint64_t FlopReport::block_body_macs() const {
  std::uint64_t m = 0;
  for (auto v : block_macs) m += v;
  return m;
}

std::uint64_t FlopReport::partition_macs(int node) const {
  return stem_macs + block_body_macs() / static_cast<std::uint64_t>(partitions) + (node == 0 ? head_macs : 0);
}

FlopReport count_flops(const SepGraph& graph) {
  const ModelSpec& s = graph.spec();
  FlopReport r;
  r.partitions = s.partitions;
  r.stem_macs = graph.stem_conv().macs({1, s.in_channels, s.in_height, s.in_width});
  for (std::size_t b = 0; b < graph.blocks().size(); ++b) {
    r.block_macs.push_back(graph.blocks()[b].macs(graph.geometry()[b].input));
  }
  r.head_macs = static_cast<std::uint64_t>(graph.head().in_features()) * graph.head().out_features();
  // the stem is computed once per node when deployed; count it once here
  r.total_macs = r.stem_macs + r.block_body_macs() + r.head_macs;
  return r;
}

}  // namespace snn
