// SPDX-License-Identifier: Apache-2.0
#include "snn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "snn/error.hpp"

namespace snn {

namespace {

struct ConvGeom {
  int cin_g, cout_g, k, stride, pad;
  int h, w, ho, wo;
};

// First and one-past-last output column whose input column ox*s + kx - pad
// falls inside [0, w).
inline void valid_range(int kx, const ConvGeom& g, int& lo, int& hi) {
  const int off = kx - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = g.w - 1 - off;
  hi = last < 0 ? 0 : std::min(g.wo, last / g.stride + 1);
}

// The per-output accumulation order is (input channel, ky, kx) for every
// grouping, so slicing a grouped conv into its groups reproduces the
// same bits.
void conv_forward_impl(const Tensor4& x, const Tensor4& weight, const ConvGeom& g, int groups, Tensor4& y) {
  const int n = x.n();
  const int cout = g.cout_g * groups;
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < cout; ++oc) {
      const int grp = oc / g.cout_g;
      float* out = y.plane(b, oc);
      std::fill(out, out + static_cast<std::size_t>(g.ho) * g.wo, 0.0f);
      for (int icg = 0; icg < g.cin_g; ++icg) {
        const float* in = x.plane(b, grp * g.cin_g + icg);
        const float* wk = weight.data().data() + (static_cast<std::size_t>(oc) * g.cin_g + icg) * g.k * g.k;
        for (int ky = 0; ky < g.k; ++ky) {
          for (int kx = 0; kx < g.k; ++kx) {
            const float wv = wk[ky * g.k + kx];
            int lo, hi;
            valid_range(kx, g, lo, hi);
            for (int oy = 0; oy < g.ho; ++oy) {
              const int iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= g.h) continue;
              float* orow = out + static_cast<std::size_t>(oy) * g.wo;
              const float* irow = in + static_cast<std::size_t>(iy) * g.w + (kx - g.pad);
              if (g.stride == 1) {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int groups)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), groups_(groups) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || groups <= 0) {
    throw ConfigError("conv2d: channels, kernel, stride and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(groups) + " does not divide in_channels=" +
                      std::to_string(in_channels) + " / out_channels=" + std::to_string(out_channels));
  }
  weight_ = Param({out_, in_ / groups_, k_, k_});
}

void Conv2d::check_input(const Shape4& in) const {
  if (in.c != in_) {
    throw ShapeError("conv2d: input channels mismatch, got " + std::to_string(in.c) + " expected " +
                     std::to_string(in_));
  }
}

Shape4 Conv2d::output_shape(const Shape4& in) const {
  check_input(in);
  const int p = padding();
  return {in.n, out_, (in.h + 2 * p - k_) / stride_ + 1, (in.w + 2 * p - k_) / stride_ + 1};
}

Tensor4 Conv2d::infer(const Tensor4& x) const {
  const Shape4 os = output_shape(x.shape());
  Tensor4 y(os);
  const ConvGeom g{in_ / groups_, out_ / groups_, k_, stride_, padding(), x.h(), x.w(), os.h, os.w};
  conv_forward_impl(x, weight_.value, g, groups_, y);
  return y;
}

Tensor4 Conv2d::forward(const Tensor4& x) {
  Tensor4 y = infer(x);
  cached_input_ = x;
  return y;
}

Tensor4 Conv2d::backward(const Tensor4& grad_out) {
  if (!cached_input_) throw StateError("conv2d: backward called without a recorded forward pass");
  const Tensor4& x = *cached_input_;
  const Shape4 os = output_shape(x.shape());
  expect_shape(grad_out.shape(), os, "conv2d backward");
  const ConvGeom g{in_ / groups_, out_ / groups_, k_, stride_, padding(), x.h(), x.w(), os.h, os.w};
  Tensor4 dx(x.shape());
  float* dw = weight_.grad.data().data();
  const float* wt = weight_.value.data().data();
  for (int b = 0; b < x.n(); ++b) {
    for (int oc = 0; oc < out_; ++oc) {
      const int grp = oc / g.cout_g;
      const float* dy = grad_out.plane(b, oc);
      for (int icg = 0; icg < g.cin_g; ++icg) {
        const int ic = grp * g.cin_g + icg;
        const float* in = x.plane(b, ic);
        float* din = dx.plane(b, ic);
        const std::size_t wbase = (static_cast<std::size_t>(oc) * g.cin_g + icg) * k_ * k_;
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const float wv = wt[wbase + ky * k_ + kx];
            int lo, hi;
            valid_range(kx, g, lo, hi);
            float acc = 0.0f;
            for (int oy = 0; oy < g.ho; ++oy) {
              const int iy = oy * stride_ + ky - g.pad;
              if (iy < 0 || iy >= g.h) continue;
              const float* drow = dy + static_cast<std::size_t>(oy) * g.wo;
              const std::size_t ioff = static_cast<std::size_t>(iy) * g.w + (kx - g.pad);
              for (int ox = lo; ox < hi; ++ox) {
                const std::size_t ii = ioff + static_cast<std::size_t>(ox) * stride_;
                acc += drow[ox] * in[ii];
                din[ii] += wv * drow[ox];
              }
            }
            dw[wbase + ky * k_ + kx] += acc;
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_ / groups_) * k_ * k_;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : weight_.value.data()) v = static_cast<float>(rng.normal() * stddev);
}

std::uint64_t Conv2d::macs(const Shape4& in) const {
  const Shape4 os = output_shape(in);
  return static_cast<std::uint64_t>(os.size()) * static_cast<std::uint64_t>(in_ / groups_) * k_ * k_;
}

Conv2d Conv2d::slice_groups(int first, int count) const {
  if (first < 0 || count <= 0 || first + count > groups_) throw ConfigError("conv2d: group slice out of range");
  const int cin_g = in_ / groups_;
  const int cout_g = out_ / groups_;
  Conv2d s(cin_g * count, cout_g * count, k_, stride_, count);
  const std::size_t per_out = static_cast<std::size_t>(cin_g) * k_ * k_;
  const auto src = weight_.value.data().subspan(static_cast<std::size_t>(first) * cout_g * per_out,
                                                static_cast<std::size_t>(count) * cout_g * per_out);
  std::copy(src.begin(), src.end(), s.weight_.value.data().begin());
  return s;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) { fn(prefix + ".weight", weight_); }

// ---------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels) : channels_(channels) {
  if (channels <= 0) throw ConfigError("batchnorm: channels must be positive");
  gamma_ = Param({channels, 1, 1, 1});
  beta_ = Param({channels, 1, 1, 1});
  gamma_.value.fill(1.0f);
  running_mean_ = Tensor4({channels, 1, 1, 1}, 0.0f);
  running_var_ = Tensor4({channels, 1, 1, 1}, 1.0f);
}

Tensor4 BatchNorm2d::infer(const Tensor4& x) const {
  if (x.c() != channels_) {
    throw ShapeError("batchnorm: channels mismatch, got " + std::to_string(x.c()) + " expected " +
                     std::to_string(channels_));
  }
  if (!stats_ready_) throw StateError("batchnorm: uninitialized statistics (eval before any training pass)");
  Tensor4 y(x.shape());
  const std::size_t plane = x.shape().plane();
  for (int c = 0; c < channels_; ++c) {
    const float scale = gamma_.value[c] / std::sqrt(running_var_[c] + kEps);
    const float shift = beta_.value[c] - running_mean_[c] * scale;
    for (int b = 0; b < x.n(); ++b) {
      const float* in = x.plane(b, c);
      float* out = y.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) out[i] = in[i] * scale + shift;
    }
  }
  return y;
}

Tensor4 BatchNorm2d::forward(const Tensor4& x, Mode mode) {
  if (mode == Mode::kEval) {
    Tensor4 y = infer(x);
    Tape t{Mode::kEval, Tensor4(x.shape()), std::vector<float>(channels_)};
    const std::size_t plane = x.shape().plane();
    for (int c = 0; c < channels_; ++c) {
      t.inv_std[c] = 1.0f / std::sqrt(running_var_[c] + kEps);
      for (int b = 0; b < x.n(); ++b) {
        const float* in = x.plane(b, c);
        float* xh = t.xhat.plane(b, c);
        for (std::size_t i = 0; i < plane; ++i) xh[i] = (in[i] - running_mean_[c]) * t.inv_std[c];
      }
    }
    tape_ = std::move(t);
    return y;
  }
  if (x.c() != channels_) {
    throw ShapeError("batchnorm: channels mismatch, got " + std::to_string(x.c()) + " expected " +
                     std::to_string(channels_));
  }
  const std::size_t plane = x.shape().plane();
  const double count = static_cast<double>(plane) * x.n();
  if (count == 0) throw ShapeError("batchnorm: empty input");
  Tape t{Mode::kTrain, Tensor4(x.shape()), std::vector<float>(channels_)};
  Tensor4 y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (int b = 0; b < x.n(); ++b) {
      const float* in = x.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) sum += in[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int b = 0; b < x.n(); ++b) {
      const float* in = x.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = in[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + kEps));
    t.inv_std[c] = inv_std;
    const float m = static_cast<float>(mean);
    for (int b = 0; b < x.n(); ++b) {
      const float* in = x.plane(b, c);
      float* xh = t.xhat.plane(b, c);
      float* out = y.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (in[i] - m) * inv_std;
        out[i] = gamma_.value[c] * xh[i] + beta_.value[c];
      }
    }
    const double unbiased = count > 1 ? sq / (count - 1) : var;
    running_mean_[c] = kMomentum * running_mean_[c] + (1.0f - kMomentum) * static_cast<float>(mean);
    running_var_[c] = kMomentum * running_var_[c] + (1.0f - kMomentum) * static_cast<float>(unbiased);
  }
  stats_ready_ = true;
  tape_ = std::move(t);
  return y;
}

Tensor4 BatchNorm2d::backward(const Tensor4& grad_out) {
  if (!tape_) throw StateError("batchnorm: backward called without a recorded forward pass");
  const Tape& t = *tape_;
  expect_shape(grad_out.shape(), t.xhat.shape(), "batchnorm backward");
  Tensor4 dx(grad_out.shape());
  const std::size_t plane = grad_out.shape().plane();
  const double count = static_cast<double>(plane) * grad_out.n();
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int b = 0; b < grad_out.n(); ++b) {
      const float* dy = grad_out.plane(b, c);
      const float* xh = t.xhat.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad[c] += static_cast<float>(sum_dy);
    const float k = gamma_.value[c] * t.inv_std[c];
    if (t.mode == Mode::kEval) {
      // statistics are constants in eval mode
      for (int b = 0; b < grad_out.n(); ++b) {
        const float* dy = grad_out.plane(b, c);
        float* d = dx.plane(b, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] = k * dy[i];
      }
      continue;
    }
    const float mean_dy = static_cast<float>(sum_dy / count);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int b = 0; b < grad_out.n(); ++b) {
      const float* dy = grad_out.plane(b, c);
      const float* xh = t.xhat.plane(b, c);
      float* d = dx.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) d[i] = k * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
    }
  }
  return dx;
}

BatchNorm2d BatchNorm2d::slice_channels(int first, int count) const {
  if (first < 0 || count <= 0 || first + count > channels_) throw ConfigError("batchnorm: channel slice out of range");
  BatchNorm2d s(count);
  for (int c = 0; c < count; ++c) {
    s.gamma_.value[c] = gamma_.value[first + c];
    s.beta_.value[c] = beta_.value[first + c];
    s.running_mean_[c] = running_mean_[first + c];
    s.running_var_[c] = running_var_[first + c];
  }
  s.stats_ready_ = stats_ready_;
  return s;
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma_);
  fn(prefix + ".beta", beta_);
}

void BatchNorm2d::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  fn(prefix + ".running_mean", running_mean_);
  fn(prefix + ".running_var", running_var_);
}

// --------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {
  if (in_features <= 0 || out_features <= 0) throw ConfigError("linear: features must be positive");
  weight_ = Param({out_, in_, 1, 1});
  bias_ = Param({out_, 1, 1, 1});
}

Tensor4 Linear::infer(const Tensor4& x) const {
  if (x.c() * x.h() * x.w() != in_) {
    throw ShapeError("linear: input features mismatch, got " + x.shape().str() + " expected " + std::to_string(in_));
  }
  Tensor4 y({x.n(), out_, 1, 1});
  const float* w = weight_.value.data().data();
  for (int b = 0; b < x.n(); ++b) {
    const float* in = x.plane(b, 0);
    for (int o = 0; o < out_; ++o) {
      float acc = bias_.value[o];
      const float* row = w + static_cast<std::size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) acc += row[i] * in[i];
      y.at(b, o, 0, 0) = acc;
    }
  }
  return y;
}

Tensor4 Linear::forward(const Tensor4& x) {
  Tensor4 y = infer(x);
  cached_input_ = x;
  return y;
}

Tensor4 Linear::backward(const Tensor4& grad_out) {
  if (!cached_input_) throw StateError("linear: backward called without a recorded forward pass");
  const Tensor4& x = *cached_input_;
  expect_shape(grad_out.shape(), {x.n(), out_, 1, 1}, "linear backward");
  Tensor4 dx(x.shape());
  const float* w = weight_.value.data().data();
  float* dw = weight_.grad.data().data();
  for (int b = 0; b < x.n(); ++b) {
    const float* in = x.plane(b, 0);
    float* din = dx.plane(b, 0);
    for (int o = 0; o < out_; ++o) {
      const float g = grad_out.at(b, o, 0, 0);
      bias_.grad[o] += g;
      const float* row = w + static_cast<std::size_t>(o) * in_;
      float* drow = dw + static_cast<std::size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) {
        drow[i] += g * in[i];
        din[i] += g * row[i];
      }
    }
  }
  return dx;
}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  for (auto& v : weight_.value.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  bias_.value.fill(0.0f);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight_);
  fn(prefix + ".bias", bias_);
}

// ----------------------------------------------------------- functional

Tensor4 relu(const Tensor4& x) {
  Tensor4 y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return y;
}

Tensor4 relu_backward(const Tensor4& y, const Tensor4& grad_out) {
  expect_shape(grad_out.shape(), y.shape(), "relu backward");
  Tensor4 dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0f ? grad_out[i] : 0.0f;
  return dx;
}

Tensor4 global_avg_pool(const Tensor4& x) {
  Tensor4 y({x.n(), x.c(), 1, 1});
  const std::size_t plane = x.shape().plane();
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  for (int b = 0; b < x.n(); ++b) {
    for (int c = 0; c < x.c(); ++c) {
      const float* in = x.plane(b, c);
      float acc = 0.0f;
      for (std::size_t i = 0; i < plane; ++i) acc += in[i];
      y.at(b, c, 0, 0) = acc / static_cast<float>(plane);
    }
  }
  return y;
}

Tensor4 global_avg_pool_backward(const Shape4& input_shape, const Tensor4& grad_out) {
  expect_shape(grad_out.shape(), {input_shape.n, input_shape.c, 1, 1}, "global_avg_pool backward");
  Tensor4 dx(input_shape);
  const std::size_t plane = input_shape.plane();
  const float scale = 1.0f / static_cast<float>(plane);
  for (int b = 0; b < input_shape.n; ++b) {
    for (int c = 0; c < input_shape.c; ++c) {
      const float g = grad_out.at(b, c, 0, 0) * scale;
      float* d = dx.plane(b, c);
      std::fill(d, d + plane, g);
    }
  }
  return dx;
}

SoftmaxCE softmax_cross_entropy(const Tensor4& logits, std::span<const int> labels) {
  const int n = logits.n();
  const int k = logits.c() * logits.h() * logits.w();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: batch mismatch, got " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(n));
  }
  SoftmaxCE r{0.0f, Tensor4({n, k, 1, 1}), Tensor4({n, k, 1, 1})};
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const int label = labels[b];
    if (label < 0 || label >= k) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) + " out of range [0," +
                        std::to_string(k) + ")");
    }
    const float* z = logits.plane(b, 0);
    const float zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (int i = 0; i < k; ++i) denom += std::exp(static_cast<double>(z[i] - zmax));
    const double log_denom = std::log(denom);
    for (int i = 0; i < k; ++i) {
      const double p = std::exp(static_cast<double>(z[i] - zmax) - log_denom);
      r.probs.at(b, i, 0, 0) = static_cast<float>(p);
      r.grad.at(b, i, 0, 0) = static_cast<float>((p - (i == label ? 1.0 : 0.0)) / n);
    }
    total += log_denom - static_cast<double>(z[label] - zmax);
  }
  r.loss = static_cast<float>(total / n);
  return r;
}

std::vector<int> argmax_rows(const Tensor4& logits) {
  const int k = logits.c() * logits.h() * logits.w();
  std::vector<int> out(logits.n());
  for (int b = 0; b < logits.n(); ++b) {
    const float* z = logits.plane(b, 0);
    out[b] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

void sgd_step(Param& p, float lr) {
  if (!p.grad.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  expect_shape(p.grad.shape(), p.value.shape(), "sgd_step");
  auto v = p.value.data();
  auto g = p.grad.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
}

void sgd_step(std::span<Param* const> params, float lr) {
  for (Param* p : params) {
    if (!p->grad.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  }
  for (Param* p : params) sgd_step(*p, lr);
}

}  // namespace snn
