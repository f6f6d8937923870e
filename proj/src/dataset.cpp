// SPDX-License-Identifier: Apache-2.0
#include "snn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snn/error.hpp"
#include "snn/rng.hpp"

namespace snn {

void DatasetConfig::validate() const {
  if (classes < 2 || classes > kMaxSyntheticClasses) throw ConfigError("dataset: classes must be in [2, 10]");
  if (size < 4) throw ConfigError("dataset: size must be >= 4");
  if (train_images < 2 || test_images < 1) throw ConfigError("dataset: need >= 2 training and >= 1 test image");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("dataset: validation_fraction must be in (0, 1)");
  }
  const int val = static_cast<int>(std::lround(validation_fraction * train_images));
  if (val < 1 || val >= train_images) throw ConfigError("dataset: validation split would be empty or everything");
  if (!(noise >= 0.0)) throw ConfigError("dataset: noise must be >= 0");
}

std::string class_name(int label) {
  static const char* names[kMaxSyntheticClasses] = {"square",          "disk",         "ring",     "plus",
                                                    "h-stripes",       "v-stripes",    "diagonal", "checker",
                                                    "triangle",        "x"};
  if (label < 0 || label >= kMaxSyntheticClasses) throw ConfigError("dataset: bad label");
  return names[label];
}

namespace {

constexpr double kPi = 3.14159265358979323846;

bool inside(int label, double u, double v, double r, double freq, double phase) {
  const double au = std::abs(u), av = std::abs(v);
  switch (label) {
    case 0:
      return au < r && av < r;
    case 1:
      return u * u + v * v < r * r;
    case 2: {
      const double rho = std::sqrt(u * u + v * v);
      return rho < r && rho > 0.55 * r;
    }
    case 3:
      return (au < r / 3 && av < r) || (av < r / 3 && au < r);
    case 4:
      return std::sin(kPi * freq * v + phase) > 0.0;
    case 5:
      return std::sin(kPi * freq * u + phase) > 0.0;
    case 6:
      return std::sin(kPi * freq * (u + v) / std::sqrt(2.0) + phase) > 0.0;
    case 7:
      return std::sin(kPi * freq * u + phase) * std::sin(kPi * freq * v + phase) > 0.0;
    case 8:
      return v > -r && v < r && au < (v + r) / 2;
    case 9:
      return au < r && av < r && (std::abs(u - v) < 0.3 * r || std::abs(u + v) < 0.3 * r);
    default:
      throw ConfigError("dataset: bad label");
  }
}

}  // namespace

void render_synthetic(int label, int size, double noise, std::uint64_t seed, std::uint64_t index,
                      std::span<float> out) {
  if (out.size() != static_cast<std::size_t>(3) * size * size) throw ShapeError("render_synthetic: buffer size");
  Rng rng = Rng(seed).fork(index);
  const double cx = rng.uniform(-0.3, 0.3), cy = rng.uniform(-0.3, 0.3);
  const double r = rng.uniform(0.45, 0.75);
  const double freq = rng.uniform(1.5, 3.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = rng.uniform(-0.5, 0.5);
    const double delta = rng.uniform(0.5, 1.0);
    fg[c] = bg[c] + (rng.below(2) ? delta : -delta);
  }
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (2.0 * (x + 0.5) / size - 1.0) - cx;
      const double v = (2.0 * (y + 0.5) / size - 1.0) - cy;
      const bool m = inside(label, u, v, r, freq, phase);
      for (int c = 0; c < 3; ++c) {
        out[c * plane + static_cast<std::size_t>(y) * size + x] =
            static_cast<float>((m ? fg[c] : bg[c]) + noise * rng.normal());
      }
    }
  }
}

Tensor4 Split::batch(std::span<const int> indices, std::vector<int>* labels_out) const {
  const std::size_t img = static_cast<std::size_t>(3) * size * size;
  Tensor4 t({static_cast<int>(indices.size()), 3, size, size});
  if (labels_out) labels_out->clear();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= count()) throw ConfigError("dataset: index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(i * img), img,
                t.data().begin() + static_cast<std::ptrdiff_t>(k * img));
    if (labels_out) labels_out->push_back(labels[i]);
  }
  return t;
}

Tensor4 Split::range(int begin, int n, std::vector<int>* labels_out) const {
  const int end = std::min(count(), begin + n);
  std::vector<int> idx;
  for (int i = begin; i < end; ++i) idx.push_back(i);
  return batch(idx, labels_out);
}

Tensor4 Split::image(int index) const {
  const int one[1] = {index};
  return batch(one);
}

namespace {

void append_image(Split& s, int label, const DatasetConfig& cfg, std::uint64_t index) {
  const std::size_t img = static_cast<std::size_t>(3) * cfg.size * cfg.size;
  const std::size_t at = s.pixels.size();
  s.pixels.resize(at + img);
  render_synthetic(label, cfg.size, cfg.noise, cfg.seed, index, std::span(s.pixels).subspan(at, img));
  s.labels.push_back(label);
}

}  // namespace

DatasetHandle make_synthetic(const DatasetConfig& cfg) {
  cfg.validate();
  DatasetHandle d;
  d.classes = cfg.classes;
  d.train.size = d.validation.size = d.test.size = cfg.size;
  // labels are balanced and then shuffled; image index i is global
  Rng rng = Rng(cfg.seed).fork(0x5EED);
  const int total = cfg.train_images + cfg.test_images;
  std::vector<int> labels(total);
  for (int i = 0; i < total; ++i) labels[i] = i % cfg.classes;
  for (int i = total - 1; i > 0; --i) std::swap(labels[i], labels[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  std::vector<int> order(cfg.train_images);
  std::iota(order.begin(), order.end(), 0);
  for (int i = cfg.train_images - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  const int val = static_cast<int>(std::lround(cfg.validation_fraction * cfg.train_images));
  std::vector<bool> is_val(cfg.train_images, false);
  for (int k = 0; k < val; ++k) is_val[order[k]] = true;

  for (int i = 0; i < cfg.train_images; ++i) append_image(is_val[i] ? d.validation : d.train, labels[i], cfg, i);
  for (int i = cfg.train_images; i < total; ++i) append_image(d.test, labels[i], cfg, i);
  return d;
}

}  // namespace snn
