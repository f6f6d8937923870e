// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace snn {

/// (batch, channels, height, width).
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::string str() const;

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense NCHW float tensor, width innermost.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, float fill = 0.0f);
  Tensor4(Shape4 shape, std::vector<float> data);

  const Shape4& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(int b, int ch, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  float& at(int b, int ch, int y, int x) noexcept { return data_[index(b, ch, y, x)]; }
  float at(int b, int ch, int y, int x) const noexcept { return data_[index(b, ch, y, x)]; }

  /// Pointer to the (b, ch) plane.
  float* plane(int b, int ch) noexcept { return data_.data() + index(b, ch, 0, 0); }
  const float* plane(int b, int ch) const noexcept { return data_.data() + index(b, ch, 0, 0); }

  void fill(float v) noexcept;
  bool all_finite() const noexcept;

  /// Channels [begin, end) of every batch item.
  Tensor4 slice_channels(int begin, int end) const;
  /// Batch items [begin, end).
  Tensor4 slice_batch(int begin, int end) const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{};
  std::vector<float> data_;
};

/// Concatenate along the channel axis. All parts share n, h, w.
Tensor4 concat_channels(std::span<const Tensor4> parts);

/// Write `src` into channels starting at `offset` of `dst`.
void write_channels(Tensor4& dst, const Tensor4& src, int offset);

/// Throws ShapeError naming `what` when the shapes differ.
void expect_shape(const Shape4& got, const Shape4& want, const std::string& what);

}  // namespace snn
