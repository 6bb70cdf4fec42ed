#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "shanshui/random.hpp"
#include "shanshui/raster.hpp"
#include "shanshui/parameters.hpp"
#include "shanshui/tensor.hpp"

namespace shanshui::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(SHANSHUI_FIXTURE_DIR) / name;
}

// Fresh directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "shanshui") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline Raster random_raster(int w, int h, int c, Rng& rng) {
  Raster img(w, h, c);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

template <typename Scalar>
nn::TensorImage<Scalar> random_image(int h, int w, Rng& rng) {
  nn::TensorImage<Scalar> t(3, h, w);
  for (Eigen::Index i = 0; i < t.data.size(); ++i)
    t.data.data()[i] = static_cast<Scalar>(2.0 * uniform01(rng) - 1.0);
  return t;
}

// Painting-like scan: smooth colored blobs on a paper tone, with a dark
// mounting frame of `frame` pixels.
inline Raster synthetic_scan(int w, int h, int frame, std::uint64_t seed) {
  Rng rng = make_rng(seed, 77);
  Raster img(w, h, 3, 0);
  const double cx = w * (0.3 + 0.4 * uniform01(rng));
  const double cy = h * (0.3 + 0.4 * uniform01(rng));
  const double r = std::min(w, h) * (0.15 + 0.15 * uniform01(rng));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x < frame || y < frame || x >= w - frame || y >= h - frame) {
        img.at(x, y, 0) = 40, img.at(x, y, 1) = 25, img.at(x, y, 2) = 20;
        continue;
      }
      const bool inside = std::hypot(x - cx, y - cy) < r;
      const bool mountain = y > h * 0.6 + 0.15 * h * std::sin(x * 0.05 + seed);
      std::uint8_t base = inside ? 60 : (mountain ? 110 : 225);
      img.at(x, y, 0) = base;
      img.at(x, y, 1) = static_cast<std::uint8_t>(base * 0.95);
      img.at(x, y, 2) = static_cast<std::uint8_t>(base * 0.8);
    }
  }
  return img;
}

// Adds independent Normal(0, std) noise to every parameter entry.
template <typename Scalar>
void perturb(nn::ParameterSet<Scalar>& params, double std, Rng& rng) {
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params.value(i).size(); ++k)
      params.value(i).data()[k] += static_cast<Scalar>(std * standard_normal(rng));
}

// 16x16 black left half, white right half.
inline Raster step_image() {
  Raster img(16, 16, 3, 0);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 255;
  return img;
}

// Low-frequency gray image: a few random blobs plus mild noise.
inline Raster smooth_random(int size, Rng& rng, int lo = 20, int hi = 235) {
  Raster img(size, size, 1);
  const double cx = uniform01(rng) * size, cy = uniform01(rng) * size;
  const double rad = 2 + uniform01(rng) * size / 2.0;
  const double fx = uniform01(rng) * 0.8, fy = uniform01(rng) * 0.8;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = std::hypot(x - cx, y - cy) < rad ? 0.8 : 0.2;
      v += 0.15 * std::sin(fx * x + fy * y) + 0.05 * uniform01(rng);
      img.at(x, y) = static_cast<std::uint8_t>(lo + (hi - lo) * std::clamp(v, 0.0, 1.0));
    }
  return img;
}

// n synthetic 120x90 scans named scan_<i>.png.
inline void write_scans(const std::filesystem::path& dir, int n) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < n; ++i) {
    save_png(dir / ("scan_" + std::to_string(i) + ".png"),
             synthetic_scan(120, 90, 6, static_cast<std::uint64_t>(i)));
  }
}

// Relative path -> bytes for every regular file under root.
inline std::map<std::string, std::vector<std::uint8_t>> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file())
      files[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

}  // namespace shanshui::testing
