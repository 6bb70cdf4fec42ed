#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace shanshui {

// Decoded 8-bit image, row-major and interleaved (H x W x C), C in {1, 3}.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Raster&) const = default;
};

// Working-precision grayscale plane: rows = height, cols = width.
using GrayImage =
    Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Binary edge plane, values in {0, 1}.
using EdgeMap =
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// PNG or JPEG bytes -> Raster. Gray sources give 1 channel, color gives 3;
// alpha is composited over white. Throws FormatError.
Raster decode_image(std::span<const std::uint8_t> bytes);

// Like decode_image but accepts PNG only.
Raster decode_png(std::span<const std::uint8_t> bytes);

// Throws IoError when the file cannot be read, FormatError when it cannot be
// decoded.
Raster load_raster(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Raster& img);
void save_png(const std::filesystem::path& path, const Raster& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

// Bilinear resampling with half-pixel centers, rounded half-up.
Raster resize(const Raster& img, int width, int height);
Raster resize(const Raster& img, int target);

Raster to_rgb(const Raster& img);

// Horizontal concatenation; all parts must share height and channel count.
Raster hconcat(std::span<const Raster> parts);

}  // namespace shanshui
