#pragma once

// Single-function reference Canny used to cross-check the staged pipeline.
// Shares no code with the library: its own kernel, direct 2-D convolutions
// over clamped coordinates, slope-bucket direction binning and a recursive
// flood fill. Sums run in the same order as the staged code so results can
// be compared bit for bit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "shanshui/canny.hpp"

namespace shanshui::testing {

inline EdgeMap oracle_canny(const Raster& src, const data::CropSpec& crop,
                                  const data::CannyParams& p) {
  auto amount = [&](double v, int dim) {
    return crop.mode == data::CropSpec::Mode::pixels ? static_cast<int>(std::llround(v))
                                                     : static_cast<int>(std::llround(v * dim));
  };
  const int top = amount(crop.top, src.height);
  const int left = amount(crop.left, src.width);
  const int h = src.height - top - amount(crop.bottom, src.height);
  const int w = src.width - left - amount(crop.right, src.width);

  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* px =
          &src.data[((static_cast<std::size_t>(y + top)) * src.width + x + left) * src.channels];
      gray[y * w + x] = src.channels == 1 ? px[0]
                                          : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  auto at = [&](const std::vector<double>& img, int y, int x) {
    return img[clampi(y, 0, h - 1) * w + clampi(x, 0, w - 1)];
  };

  const int r = p.radius;
  std::vector<double> g(2 * r + 1);
  double norm = 0.0;
  for (int i = 0; i <= 2 * r; ++i) {
    const double d = i - r;
    g[i] = std::exp(-(d * d) / (2.0 * p.sigma * p.sigma));
    norm += g[i];
  }
  for (double& v : g) v /= norm;

  // 2-D convolution with the outer-product kernel g[j] * g[i], written as a
  // nested sum over the window.
  std::vector<double> blur(gray.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double outer = 0.0;
      for (int j = -r; j <= r; ++j) {
        double inner = 0.0;
        for (int i = -r; i <= r; ++i) inner += g[i + r] * at(gray, y + j, x + i);
        outer += g[j + r] * inner;
      }
      blur[y * w + x] = outer;
    }

  const double sobel_x[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const double sobel_y[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  std::vector<double> gx(gray.size()), gy(gray.size()), mag(gray.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sx = 0.0, sy = 0.0;
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
          const double v = at(blur, y + j - 1, x + i - 1);
          sx += sobel_x[j][i] * v;
          sy += sobel_y[j][i] * v;
        }
      gx[y * w + x] = sx;
      gy[y * w + x] = sy;
      mag[y * w + x] = std::sqrt(sx * sx + sy * sy);
    }

  std::vector<double> thin(gray.size(), 0.0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const int k = y * w + x;
      double deg = std::fmod(std::atan2(gy[k], gx[k]) * 180.0 / std::numbers::pi + 180.0, 180.0);
      // Bucket centers 0, 45, 90, 135; a boundary angle joins the lower bucket.
      const int bucket = static_cast<int>(std::ceil((deg - 22.5) / 45.0)) % 4;
      int ax = 0, ay = 0;
      switch (bucket) {
        case 0: ax = 1; ay = 0; break;
        case 1: ax = 1; ay = 1; break;
        case 2: ax = 0; ay = 1; break;
        default: ax = -1; ay = 1; break;
      }
      const double m = mag[k];
      if (m >= mag[(y + ay) * w + x + ax] && m >= mag[(y - ay) * w + x - ax]) thin[k] = m;
    }

  EdgeMap edges = EdgeMap::Zero(h, w);
  std::function<void(int, int)> fill = [&](int y, int x) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= h || nx >= w || edges(ny, nx)) continue;
        if (thin[ny * w + nx] >= p.low_threshold) {
          edges(ny, nx) = 1;
          fill(ny, nx);
        }
      }
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (thin[y * w + x] >= p.high_threshold && !edges(y, x)) {
        edges(y, x) = 1;
        fill(y, x);
      }
  return edges;
}

}  // namespace shanshui::testing
