// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "snn/config.hpp"
#include "snn/error.hpp"

namespace snn {
namespace {

TEST(Config, ParsesKeyValueLinesAndComments) {
  const auto kv = parse_config_text("# header\nmodel.partitions = 2  # trailing\n\n  seed=7\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"model.partitions", "2"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"seed", "7"}));
  EXPECT_THROW(parse_config_text("just words\n"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3\n"), ConfigError);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  RunConfig c = desk_preset();
  EXPECT_THROW(c.set("model.partition", "2"), ConfigError);
  EXPECT_THROW(c.set("model.partitions", "two"), ConfigError);
  EXPECT_THROW(c.set("model.partitions", "2.5"), ConfigError);
  EXPECT_THROW(c.set("search.shared_lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("wire.dtype", "bf16"), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
}

TEST(Config, FileThenOverridesThenEnvironment) {
  const auto path = (std::filesystem::temp_directory_path() / "snn_test.cfg").string();
  std::ofstream(path) << "model.depth = 56\nmodel.stages = 3\nmodel.cardinality = 8\nmodel.width = 16\n"
                         "model.image_size = 32\nmodel.base_width = 64\nmodel.stem_channels = 16\n"
                         "model.classes = 100\nseed = 3\n";
  ::setenv("SNN_OUTPUT_DIR", "/tmp/snn_env_out", 1);
  const RunConfig c = load_run_config(path, {"model.alpha=2", "seed = 9"});
  ::unsetenv("SNN_OUTPUT_DIR");
  EXPECT_EQ(c.model.blocks_per_stage, 6);
  EXPECT_EQ(c.model.depth(), 56);
  EXPECT_EQ(c.model.alpha, 2);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.search.seed, 9u);
  EXPECT_EQ(c.dataset.seed, 9u);
  EXPECT_EQ(c.search.model, c.model);
  EXPECT_EQ(c.output_dir, "/tmp/snn_env_out");
  EXPECT_THROW(load_run_config(path, {"model.depth=57"}), ConfigError);
  EXPECT_THROW(load_run_config(path, {"nonsense"}), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/x.cfg", {}), ConfigError);
  std::filesystem::remove(path);
}

TEST(Config, ResolvedTextReloadsToTheSameConfig) {
  RunConfig c = desk_preset();
  c.set("search.controller_lr", "0.125");
  c.set("wire.dtype", "f16");
  c.resolve();
  const std::string text = c.resolved_text();
  RunConfig back = desk_preset();
  for (const auto& [k, v] : parse_config_text(text)) back.set(k, v);
  back.resolve();
  EXPECT_EQ(back.resolved_text(), text);
  EXPECT_EQ(back.search.controller_lr, 0.125);
  EXPECT_EQ(back.dtype, WireDtype::kF16);
  // every key appears exactly once
  for (const auto& k : RunConfig::keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, DeskPresetIsTheSmallSeparableModel) {
  const RunConfig c = desk_preset();
  EXPECT_EQ(c.model.depth(), 14);
  EXPECT_EQ(c.model.partitions, 4);
  EXPECT_EQ(c.model.alpha, 2);
  EXPECT_EQ(c.dataset.classes, c.model.num_classes);
  EXPECT_NO_THROW(c.search.validate());
}

}  // namespace
}  // namespace snn
