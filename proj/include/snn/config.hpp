// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run configuration: `key = value` lines, `#` starts a comment.
// Command-line `--set key=value` overrides are applied after the file.
// Unknown keys are errors. SNN_OUTPUT_DIR overrides output_dir.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "snn/dataset.hpp"
#include "snn/model.hpp"
#include "snn/perf_model.hpp"
#include "snn/search.hpp"
#include "snn/wire.hpp"

namespace snn {

struct RunConfig {
  ModelSpec model;
  int model_depth = 0;  // when set, blocks_per_stage = (depth - 2) / (3 * stages)
  SearchConfig search;
  DatasetConfig dataset;
  ClusterSpec cluster;
  WireDtype dtype = WireDtype::kF32;
  std::uint64_t seed = 1;
  std::string output_dir = "snn_out";
  std::string policy_path;
  std::string checkpoint_path;
  std::string host = "127.0.0.1";
  double timeout_s = 30.0;

  /// Sets one key. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Derives dependent fields (depth, seeds, search model) and validates.
  void resolve();
  /// Every key with its current value, one `key = value` line each, sorted.
  std::string resolved_text() const;
  static std::vector<std::string> keys();
};

/// Parses `key = value` lines; returns pairs in file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Defaults, then the file (if any), then overrides, then the environment.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

/// The small depth-14, G = 4, alpha = 2 model on 16x16 synthetic images.
RunConfig desk_preset();

}  // namespace snn
