// SPDX-License-Identifier: Apache-2.0
//
// Seeded procedural image classification: each class is a shape or texture
// family drawn at a random position, scale, and colour over a random
// background with additive noise. Image i depends only on (seed, i).
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "snn/tensor.hpp"

namespace snn {

constexpr int kMaxSyntheticClasses = 10;

struct DatasetConfig {
  int classes = 6;
  int size = 16;           // square images, 3 channels
  int train_images = 2000;  // before the validation split
  int test_images = 500;
  double validation_fraction = 0.1;
  double noise = 0.35;     // std of additive Gaussian noise
  std::uint64_t seed = 1;

  void validate() const;
};

/// Images stored back to back as (3, size, size) float planes.
struct Split {
  int size = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  int count() const noexcept { return static_cast<int>(labels.size()); }
  /// Stacks the selected images into (n, 3, size, size).
  Tensor4 batch(std::span<const int> indices, std::vector<int>* labels_out = nullptr) const;
  /// Contiguous range [begin, begin + n), clipped to the split.
  Tensor4 range(int begin, int n, std::vector<int>* labels_out = nullptr) const;
  Tensor4 image(int index) const;
};

struct DatasetHandle {
  int classes = 0;
  Split train;
  Split validation;  // drawn at random from the training images
  Split test;
};

/// Renders one image of class `label` into `out` (3 * size * size floats).
void render_synthetic(int label, int size, double noise, std::uint64_t seed, std::uint64_t index,
                      std::span<float> out);

DatasetHandle make_synthetic(const DatasetConfig& cfg);

std::string class_name(int label);

}  // namespace snn
