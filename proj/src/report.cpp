// SPDX-License-Identifier: Apache-2.0
#include "snn/report.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "snn/error.hpp"

namespace snn {

using json = nlohmann::json;

namespace {

const char* const kIterationFields[] = {"sampler", "iteration", "loss", "mean_reward", "best_accuracy",
                                        "kept_best_accuracy"};

std::string cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    std::ostringstream os;
    os << std::setprecision(6) << v.get<double>();
    return os.str();
  }
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

RunLog read_run_log(const std::string& path, std::string label) {
  std::ifstream f(path);
  if (!f) throw ConfigError("report: cannot open " + path);
  RunLog log;
  log.label = label.empty() ? std::filesystem::path(path).stem().string() : std::move(label);
  for (std::string line; std::getline(f, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) log.lines.push_back(line);
  }
  return log;
}

Report build_report(const std::vector<RunLog>& logs) {
  if (logs.empty()) throw ConfigError("report: no run logs given");
  json series = json::array();
  std::set<int> all_iterations;
  std::set<std::string> labels;
  for (const RunLog& log : logs) {
    if (!labels.insert(log.label).second) throw ConfigError("report: duplicate label '" + log.label + "'");
    json s{{"label", log.label}, {"sampler", nullptr}, {"iteration", json::array()}, {"loss", json::array()},
           {"mean_reward", json::array()}, {"best_accuracy", json::array()}, {"kept_best_accuracy", json::array()},
           {"finetune", nullptr}};
    int last = -1;
    for (std::size_t n = 0; n < log.lines.size(); ++n) {
      const std::string where = log.label + " line " + std::to_string(n + 1);
      json j;
      try {
        j = json::parse(log.lines[n]);
      } catch (const json::exception&) {
        throw ConfigError("report: " + where + " is not JSON");
      }
      if (!j.is_object() || !j.contains("stage")) throw ConfigError("report: " + where + " has no stage field");
      const std::string stage = j["stage"].get<std::string>();
      if (stage == "finetune") {
        s["finetune"] = j;
        continue;
      }
      if (stage != "iteration") throw ConfigError("report: " + where + " has unknown stage '" + stage + "'");
      for (const char* key : kIterationFields) {
        if (!j.contains(key)) throw ConfigError("report: " + where + " lacks field '" + key + "' (incompatible schema)");
      }
      if (s["sampler"].is_null()) s["sampler"] = j["sampler"];
      if (s["sampler"] != j["sampler"]) throw ConfigError("report: " + where + " mixes samplers");
      const int it = j["iteration"].get<int>();
      if (it <= last) throw ConfigError("report: " + where + " iterations are not increasing");
      last = it;
      all_iterations.insert(it);
      s["iteration"].push_back(it);
      for (const char* key : {"loss", "mean_reward", "best_accuracy", "kept_best_accuracy"}) s[key].push_back(j[key]);
    }
    if (s["iteration"].empty()) throw ConfigError("report: " + log.label + " has no iteration records");
    series.push_back(std::move(s));
  }
  Report r;
  r.data = {{"format", "snn-report"}, {"version", 1}, {"iterations", all_iterations}, {"series", series}};
  return r;
}

std::string Report::csv() const {
  std::ostringstream os;
  os << "iteration,label,sampler,loss,mean_reward,best_accuracy,kept_best_accuracy\n";
  for (const int it : data.at("iterations")) {
    for (const json& s : data.at("series")) {
      const auto& its = s.at("iteration");
      for (std::size_t k = 0; k < its.size(); ++k) {
        if (its[k].get<int>() != it) continue;
        os << it << ',' << s.at("label").get<std::string>() << ',' << cell(s.at("sampler"));
        for (const char* key : {"loss", "mean_reward", "best_accuracy", "kept_best_accuracy"}) os << ',' << cell(s.at(key)[k]);
        os << '\n';
      }
    }
  }
  return os.str();
}

std::string Report::text() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "iteration";
  for (const json& s : data.at("series")) os << std::setw(28) << (s.at("label").get<std::string>() + " best/kept");
  os << '\n';
  for (const int it : data.at("iterations")) {
    os << std::setw(10) << it;
    for (const json& s : data.at("series")) {
      std::string v = "-";
      const auto& its = s.at("iteration");
      for (std::size_t k = 0; k < its.size(); ++k) {
        if (its[k].get<int>() == it) v = cell(s.at("best_accuracy")[k]) + " / " + cell(s.at("kept_best_accuracy")[k]);
      }
      os << std::setw(28) << v;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> write_report(const Report& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string j = (std::filesystem::path(dir) / "report.json").string();
  const std::string c = (std::filesystem::path(dir) / "report.csv").string();
  std::ofstream(j) << r.data.dump(2) << '\n';
  std::ofstream(c) << r.csv();
  return {j, c};
}

}  // namespace snn
