// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "snn/error.hpp"
#include "snn/report.hpp"
#include "snn/search.hpp"

namespace snn {
namespace {

RunLog make_log(const std::string& label, SamplerKind kind, int n, double base) {
  RunLog log{label, {}};
  for (int i = 0; i < n; ++i) {
    IterationLog it;
    it.iteration = i;
    it.shared_loss = 2.0 - 0.1 * i;
    it.mean_reward = kind == SamplerKind::kRandom ? std::nan("") : base + 0.01 * i;
    it.best_val_accuracy = base + 0.02 * i;
    it.kept_best_accuracy = base + 0.02 * i;
    it.best_policy = PolicySequence::all_self(4, 2, 2);
    log.lines.push_back(it.to_json(kind));
  }
  log.lines.push_back(R"({"stage":"finetune","sampler":"x","loss":0.5,"val_accuracy":0.7,"test_accuracy":0.6})");
  return log;
}

TEST(Report, TwoLogsGiveTwoAlignedSeries) {
  const Report r = build_report({make_log("controller", SamplerKind::kController, 4, 0.5),
                                 make_log("random", SamplerKind::kRandom, 3, 0.4)});
  ASSERT_EQ(r.data["series"].size(), 2u);
  EXPECT_EQ(r.data["iterations"], nlohmann::json({0, 1, 2, 3}));
  EXPECT_EQ(r.data["series"][0]["sampler"], "controller");
  EXPECT_TRUE(r.data["series"][1]["mean_reward"][0].is_null());
  EXPECT_DOUBLE_EQ(r.data["series"][0]["best_accuracy"][3].get<double>(), 0.56);
  EXPECT_FALSE(r.data["series"][0]["finetune"].is_null());
  // one CSV row per (iteration, series) pair present in the data
  std::istringstream csv(r.csv());
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 7);
  EXPECT_NE(r.text().find("controller best/kept"), std::string::npos);
}

TEST(Report, SingleLogGivesSingleSeries) {
  const Report r = build_report({make_log("only", SamplerKind::kController, 2, 0.5)});
  EXPECT_EQ(r.data["series"].size(), 1u);
}

TEST(Report, CsvIsDerivedFromJson) {
  Report r = build_report({make_log("a", SamplerKind::kController, 2, 0.5)});
  r.data["series"][0]["best_accuracy"][1] = 0.125;
  EXPECT_NE(r.csv().find(",0.125,"), std::string::npos);
}

TEST(Report, RejectsEmptyAndIncompatibleLogs) {
  EXPECT_THROW(build_report({}), ConfigError);
  EXPECT_THROW(build_report({RunLog{"x", {}}}), ConfigError);
  EXPECT_THROW(build_report({RunLog{"x", {"not json"}}}), ConfigError);
  EXPECT_THROW(build_report({RunLog{"x", {R"({"stage":"iteration","iteration":0})"}}}), ConfigError);
  EXPECT_THROW(build_report({RunLog{"x", {R"({"iteration":0})"}}}), ConfigError);
  auto log = make_log("dup", SamplerKind::kController, 2, 0.5);
  EXPECT_THROW(build_report({log, log}), ConfigError);
  std::swap(log.lines[0], log.lines[1]);
  EXPECT_THROW(build_report({log}), ConfigError);  // iterations out of order
}

TEST(Report, WritesJsonAndCsvFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "snn_report_test";
  std::filesystem::remove_all(dir);
  const auto paths = write_report(build_report({make_log("a", SamplerKind::kController, 2, 0.5)}), dir.string());
  ASSERT_EQ(paths.size(), 2u);
  for (const auto& p : paths) EXPECT_GT(std::filesystem::file_size(p), 0u);
  const RunLog back = read_run_log(paths[0]);
  EXPECT_EQ(back.label, "report");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace snn
