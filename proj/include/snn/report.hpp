// SPDX-License-Identifier: Apache-2.0
//
// Merges JSON-lines search logs into per-run series aligned by iteration.
// The CSV and text views are rendered from the JSON document, never from
// the logs directly.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace snn {

struct RunLog {
  std::string label;
  std::vector<std::string> lines;
};

RunLog read_run_log(const std::string& path, std::string label = "");

struct Report {
  nlohmann::json data;
  std::string csv() const;
  std::string text() const;
};

/// Throws ConfigError for an empty list, malformed lines, or logs whose
/// iteration records lack the fields of the search log schema.
Report build_report(const std::vector<RunLog>& logs);

/// Writes report.json and report.csv into `dir`; returns their paths.
std::vector<std::string> write_report(const Report& r, const std::string& dir);

}  // namespace snn
