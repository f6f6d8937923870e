// SPDX-License-Identifier: Apache-2.0
#include "snn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "snn/error.hpp"

namespace snn {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape4 shape, float fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

Tensor4::Tensor4(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " + shape_.str());
  }
}

void Tensor4::fill(float v) noexcept { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor4 Tensor4::slice_channels(int begin, int end) const {
  if (begin < 0 || end > shape_.c || begin > end) {
    throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_.str());
  }
  Tensor4 out({shape_.n, end - begin, shape_.h, shape_.w});
  const std::size_t plane_bytes = shape_.plane() * sizeof(float);
  for (int b = 0; b < shape_.n; ++b) {
    if (end > begin) std::memcpy(out.plane(b, 0), plane(b, begin), plane_bytes * (end - begin));
  }
  return out;
}

Tensor4 Tensor4::slice_batch(int begin, int end) const {
  if (begin < 0 || end > shape_.n || begin > end) {
    throw ShapeError("batch slice out of range for " + shape_.str());
  }
  const std::size_t item = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::vector<float> d(data_.begin() + static_cast<std::ptrdiff_t>(item * begin),
                       data_.begin() + static_cast<std::ptrdiff_t>(item * end));
  return Tensor4({end - begin, shape_.c, shape_.h, shape_.w}, std::move(d));
}

Tensor4 concat_channels(std::span<const Tensor4> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape4 first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    if (p.n() != first.n || p.h() != first.h || p.w() != first.w) {
      throw ShapeError("concat: " + p.shape().str() + " incompatible with " + first.str());
    }
    channels += p.c();
  }
  Tensor4 out({first.n, channels, first.h, first.w});
  int offset = 0;
  for (const auto& p : parts) {
    write_channels(out, p, offset);
    offset += p.c();
  }
  return out;
}

void write_channels(Tensor4& dst, const Tensor4& src, int offset) {
  if (src.n() != dst.n() || src.h() != dst.h() || src.w() != dst.w() || offset < 0 || offset + src.c() > dst.c()) {
    throw ShapeError("write_channels: " + src.shape().str() + " at channel " + std::to_string(offset) + " into " +
                     dst.shape().str());
  }
  const std::size_t bytes = src.shape().plane() * sizeof(float) * src.c();
  for (int b = 0; b < src.n(); ++b) {
    if (bytes) std::memcpy(dst.plane(b, offset), src.plane(b, 0), bytes);
  }
}

void expect_shape(const Shape4& got, const Shape4& want, const std::string& what) {
  if (got == want) return;
  std::string dim;
  if (got.n != want.n) dim = "batch";
  else if (got.c != want.c) dim = "channels";
  else if (got.h != want.h) dim = "height";
  else dim = "width";
  throw ShapeError(what + ": " + dim + " mismatch, got " + got.str() + " expected " + want.str());
}

}  // namespace snn
