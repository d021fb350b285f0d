#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "disarm/config.hpp"
#include "disarm/data.hpp"

namespace disarm {

// metrics.jsonl gets one record per logged step; timing.jsonl gets the
// matching wall-clock figures so the metrics stay byte-reproducible.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& dir);

  void record(const nlohmann::ordered_json& rec, double wall_ms);

 private:
  std::ofstream metrics_;
  std::ofstream timing_;
};

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& doc);

struct DataSplit {
  ImageSet train;
  ImageSet test;
  Eigen::VectorXd mean;  // per-pixel training mean, used for centering
};

DataSplit load_data(const ExperimentConfig& config);

// Validates, runs, and writes config.json, metrics.jsonl, timing.jsonl,
// summary.json and checkpoints under config.out. Returns the summary.
nlohmann::ordered_json run(const ExperimentConfig& config);

// Test bound of a saved model; the config supplies data and model shape.
nlohmann::ordered_json evaluate(const ExperimentConfig& config,
                                const std::filesystem::path& checkpoint);

}  // namespace disarm
