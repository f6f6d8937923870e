// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "snn/rng.hpp"
#include "snn/tensor.hpp"

namespace snn::test {

inline Tensor4 random_tensor(Shape4 s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor4 t(s);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform_float();
  return t;
}

/// sum(r * y) accumulated in double.
inline double dot(const Tensor4& r, const Tensor4& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(r[i]) * y[i];
  return acc;
}

/// ||a - b|| / max(||a||, ||b||), with a tiny floor for all-zero inputs.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

/// Central finite differences of `loss` w.r.t. every element of `values`.
inline std::vector<double> numeric_gradient(std::span<float> values, const std::function<double()>& loss,
                                            float h = 1e-3f) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float orig = values[i];
    values[i] = orig + h;
    const double up = loss();
    values[i] = orig - h;
    const double down = loss();
    values[i] = orig;
    g[i] = (up - down) / (2.0 * static_cast<double>(h));
  }
  return g;
}

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace snn::test

namespace snn::test {

struct KinkAwareComparison {
  std::size_t agree = 0;
  std::size_t disagree = 0;
  std::size_t kinked = 0;
};

/// Elementwise comparison of `analytic` against central differences. An
/// element whose estimate moves between step h and h/2 sits on a ReLU kink
/// and is skipped; the rest must match within atol + rtol * magnitude.
inline KinkAwareComparison compare_smooth(std::span<float> values, const std::vector<double>& analytic,
                                          const std::function<double()>& loss, float h = 1e-3f,
                                          double atol = 2e-4, double rtol = 2e-2) {
  const auto coarse = numeric_gradient(values, loss, h);
  const auto fine = numeric_gradient(values, loss, h / 2);
  KinkAwareComparison r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::abs(coarse[i] - fine[i]) > atol + rtol * std::max(std::abs(coarse[i]), std::abs(fine[i]))) {
      ++r.kinked;
    } else if (std::abs(analytic[i] - fine[i]) > atol + rtol * std::max(std::abs(analytic[i]), std::abs(fine[i]))) {
      ++r.disagree;
    } else {
      ++r.agree;
    }
  }
  return r;
}

}  // namespace snn::test
