#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "shanshui/canny.hpp"

namespace shanshui::data {

struct DatasetConfig {
  CropSpec crop;
  CannyParams canny;
  int size = 256;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Unpaired two-domain listing. Paths are relative to the dataset root.
struct DatasetManifest {
  std::vector<std::string> domain_a;  // sketches
  std::vector<std::string> domain_b;  // paintings
  std::map<std::string, std::string> split;  // path -> "train" | "test"
  DatasetConfig preprocess;
  std::string created_at;

  std::vector<std::string> files(char domain, const std::string& split_name) const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Reads <root>/manifest.json and checks every listed file exists.
DatasetManifest load_manifest(const std::filesystem::path& root);

// Scans `scan_dir` (flat, PNG/JPEG), writes trainA/trainB/testA/testB and
// manifest.json under `out_dir`.
DatasetManifest build_dataset(const std::filesystem::path& scan_dir,
                              const std::filesystem::path& out_dir,
                              const DatasetConfig& config);

// UTC ISO-8601 with millisecond precision.
std::string iso8601(std::chrono::system_clock::time_point t);

}  // namespace shanshui::data
