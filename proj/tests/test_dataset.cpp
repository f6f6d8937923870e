// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "snn/dataset.hpp"
#include "snn/error.hpp"

namespace snn {
namespace {

DatasetConfig small() {
  DatasetConfig c;
  c.classes = 5;
  c.size = 8;
  c.train_images = 200;
  c.test_images = 50;
  return c;
}

TEST(Dataset, SplitsHaveExpectedSizesAndLabels) {
  const auto d = make_synthetic(small());
  EXPECT_EQ(d.validation.count(), 20);  // 10% of the training images
  EXPECT_EQ(d.train.count(), 180);
  EXPECT_EQ(d.test.count(), 50);
  for (const Split* s : {&d.train, &d.validation, &d.test}) {
    EXPECT_EQ(s->pixels.size(), static_cast<std::size_t>(s->count()) * 3 * 8 * 8);
    for (int l : s->labels) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, 5);
    }
    for (float v : s->pixels) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Dataset, SplitsAreDisjoint) {
  const auto d = make_synthetic(small());
  // images are continuous-valued, so identical pixel vectors mean identical images
  std::set<std::vector<float>> seen;
  for (const Split* s : {&d.train, &d.validation, &d.test}) {
    for (int i = 0; i < s->count(); ++i) {
      const auto img = s->image(i).storage();
      EXPECT_TRUE(seen.insert(img).second);
    }
  }
}

TEST(Dataset, DeterministicBySeed) {
  const auto a = make_synthetic(small());
  const auto b = make_synthetic(small());
  EXPECT_EQ(a.train.pixels, b.train.pixels);
  EXPECT_EQ(a.validation.labels, b.validation.labels);
  DatasetConfig other = small();
  other.seed = 2;
  EXPECT_NE(make_synthetic(other).train.pixels, a.train.pixels);
}

TEST(Dataset, ClassesAreBalanced) {
  DatasetConfig c = small();
  c.train_images = 500;
  const auto d = make_synthetic(c);
  std::vector<int> count(5, 0);
  for (const Split* s : {&d.train, &d.validation, &d.test})
    for (int l : s->labels) ++count[l];
  for (int n : count) EXPECT_EQ(n, 110);
}

TEST(Dataset, NoiselessShapesDifferByClass) {
  // without noise, the foreground mask of every class differs from the others
  std::vector<std::vector<float>> imgs;
  for (int k = 0; k < kMaxSyntheticClasses; ++k) {
    std::vector<float> px(3 * 16 * 16);
    render_synthetic(k, 16, 0.0, 1, 0, px);
    imgs.push_back(px);
  }
  for (int a = 0; a < kMaxSyntheticClasses; ++a)
    for (int b = a + 1; b < kMaxSyntheticClasses; ++b) EXPECT_NE(imgs[a], imgs[b]) << a << " " << b;
}

TEST(Dataset, BatchGathersRows) {
  const auto d = make_synthetic(small());
  const std::vector<int> idx{3, 0};
  std::vector<int> labels;
  const Tensor4 x = d.train.batch(idx, &labels);
  EXPECT_EQ(x.shape(), (Shape4{2, 3, 8, 8}));
  EXPECT_EQ(labels, (std::vector<int>{d.train.labels[3], d.train.labels[0]}));
  EXPECT_EQ(x.at(0, 1, 2, 5), d.train.image(3).at(0, 1, 2, 5));
  EXPECT_EQ(d.train.range(175, 10).n(), 5);
  const std::vector<int> bad{999};
  EXPECT_THROW(d.train.batch(bad), ConfigError);
}

TEST(Dataset, ConfigValidation) {
  DatasetConfig c = small();
  c.classes = 11;
  EXPECT_THROW(make_synthetic(c), ConfigError);
  c = small();
  c.validation_fraction = 0.0;
  EXPECT_THROW(make_synthetic(c), ConfigError);
  c = small();
  c.train_images = 1;
  EXPECT_THROW(make_synthetic(c), ConfigError);
}

}  // namespace
}  // namespace snn
