#include "shanshui/dataset.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "shanshui/errors.hpp"
#include "shanshui/random.hpp"

namespace shanshui::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string iso8601(std::chrono::system_clock::time_point t) {
  using namespace std::chrono;
  const auto ms = duration_cast<milliseconds>(t.time_since_epoch()).count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
  return buf;
}

std::vector<std::string> DatasetManifest::files(
    char domain, const std::string& split_name) const {
  const auto& listing = domain == 'A' ? domain_a : domain_b;
  std::vector<std::string> out;
  for (const auto& path : listing) {
    auto it = split.find(path);
    if (it != split.end() && it->second == split_name) out.push_back(path);
  }
  return out;
}

namespace {

json crop_json(const CropSpec& c) {
  return {{"mode", c.mode == CropSpec::Mode::pixels ? "pixels" : "fraction"},
          {"top", c.top},
          {"bottom", c.bottom},
          {"left", c.left},
          {"right", c.right}};
}

json canny_json(const CannyParams& p) {
  return {{"sigma", p.sigma},
          {"radius", p.radius},
          {"low_threshold", p.low_threshold},
          {"high_threshold", p.high_threshold}};
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::chrono::system_clock::time_point modification_time(const fs::path& p) {
  struct stat st {};
  if (::stat(p.c_str(), &st) != 0) throw IoError("cannot stat " + p.string());
  using namespace std::chrono;
  return system_clock::time_point(
      duration_cast<system_clock::duration>(seconds(st.st_mtim.tv_sec) +
                                            nanoseconds(st.st_mtim.tv_nsec)));
}

}  // namespace

json to_json(const DatasetManifest& m) {
  json split = json::object();
  for (const auto& [path, name] : m.split) split[path] = name;
  return {{"domain_a", m.domain_a},
          {"domain_b", m.domain_b},
          {"split", split},
          {"preprocess",
           {{"crop", crop_json(m.preprocess.crop)},
            {"canny", canny_json(m.preprocess.canny)},
            {"size", m.preprocess.size},
            {"train_fraction", m.preprocess.train_fraction}}},
          {"seed", m.preprocess.seed},
          {"created_at", m.created_at}};
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.domain_a = j.at("domain_a").get<std::vector<std::string>>();
    m.domain_b = j.at("domain_b").get<std::vector<std::string>>();
    for (const auto& [path, name] : j.at("split").items()) {
      m.split[path] = name.get<std::string>();
    }
    const json& pre = j.at("preprocess");
    const json& crop = pre.at("crop");
    m.preprocess.crop.mode = crop.at("mode").get<std::string>() == "pixels"
                                 ? CropSpec::Mode::pixels
                                 : CropSpec::Mode::fraction;
    m.preprocess.crop.top = crop.at("top").get<double>();
    m.preprocess.crop.bottom = crop.at("bottom").get<double>();
    m.preprocess.crop.left = crop.at("left").get<double>();
    m.preprocess.crop.right = crop.at("right").get<double>();
    const json& canny = pre.at("canny");
    m.preprocess.canny.sigma = canny.at("sigma").get<double>();
    m.preprocess.canny.radius = canny.at("radius").get<int>();
    m.preprocess.canny.low_threshold = canny.at("low_threshold").get<double>();
    m.preprocess.canny.high_threshold = canny.at("high_threshold").get<double>();
    m.preprocess.size = pre.at("size").get<int>();
    m.preprocess.train_fraction = pre.value("train_fraction", 0.8);
    m.preprocess.seed = j.at("seed").get<std::uint64_t>();
    m.created_at = j.at("created_at").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  if (m.domain_a.empty() || m.domain_b.empty()) {
    throw DomainError("manifest lists an empty domain");
  }
  std::set<std::string> seen;
  for (const auto* listing : {&m.domain_a, &m.domain_b}) {
    for (const auto& rel : *listing) {
      if (!seen.insert(rel).second) {
        throw FormatError("manifest lists " + rel + " twice");
      }
      if (!fs::exists(root / rel)) {
        throw IoError("manifest entry missing on disk: " + rel);
      }
    }
  }
  return m;
}

DatasetManifest build_dataset(const fs::path& scan_dir, const fs::path& out_dir,
                              const DatasetConfig& config) {
  config.canny.validate();
  if (config.size < kMinCropSide) throw DomainError("dataset size must be >= 16");
  if (!(config.train_fraction >= 0.0 && config.train_fraction <= 1.0)) {
    throw DomainError("train fraction must lie in [0, 1]");
  }
  if (!fs::is_directory(scan_dir)) {
    throw IoError("scan directory not found: " + scan_dir.string());
  }
  std::vector<fs::path> scans;
  for (const auto& entry : fs::directory_iterator(scan_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      scans.push_back(entry.path());
    }
  }
  std::sort(scans.begin(), scans.end());
  if (scans.size() < 2) {
    throw DomainError("build_dataset needs at least 2 images in " +
                      scan_dir.string());
  }

  // Output stems, disambiguated when two scans share one.
  std::vector<std::string> names;
  std::set<std::string> used;
  for (const auto& s : scans) {
    std::string name = s.stem().string();
    for (int k = 1; used.count(name); ++k) name = s.stem().string() + "_" + std::to_string(k);
    used.insert(name);
    names.push_back(name + ".png");
  }

  std::vector<std::size_t> order(scans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_rng(config.seed);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::clamp<long long>(
      std::llround(config.train_fraction * static_cast<double>(scans.size())), 0,
      static_cast<long long>(scans.size())));
  std::vector<bool> is_train(scans.size(), false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

  try {
    for (const char* sub : {"trainA", "trainB", "testA", "testB"}) {
      fs::create_directories(out_dir / sub);
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create dataset directories: ") + e.what());
  }

  DatasetManifest manifest;
  manifest.preprocess = config;
  auto newest = std::chrono::system_clock::time_point::min();
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const Raster scan = load_raster(scans[i]);
    newest = std::max(newest, modification_time(scans[i]));
    const Raster painting =
        to_rgb(resize(crop_frame(scan, config.crop), config.size));
    const Raster sketch =
        edge_to_sketch(canny(painting, CropSpec::none(), config.canny));
    const std::string split = is_train[i] ? "train" : "test";
    const std::string rel_a = split + "A/" + names[i];
    const std::string rel_b = split + "B/" + names[i];
    save_png(out_dir / rel_a, sketch);
    save_png(out_dir / rel_b, painting);
    manifest.domain_a.push_back(rel_a);
    manifest.domain_b.push_back(rel_b);
    manifest.split[rel_a] = split;
    manifest.split[rel_b] = split;
  }
  // Provenance time of the inputs, so reruns produce identical manifests.
  manifest.created_at = iso8601(newest);

  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + out_dir.string());
  out << to_json(manifest).dump(2) << '\n';
  if (!out) throw IoError("manifest write failed in " + out_dir.string());
  return manifest;
}

}  // namespace shanshui::data
