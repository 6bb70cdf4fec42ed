#include "shanshui/canny.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "shanshui/errors.hpp"

namespace shanshui::data {

void CannyParams::validate() const {
  if (!(sigma > 0.0)) throw DomainError("canny sigma must be > 0");
  if (radius < 1) throw DomainError("canny radius must be >= 1");
  if (!(low_threshold >= 0.0 && low_threshold < high_threshold)) {
    throw DomainError("canny thresholds need 0 <= low < high");
  }
}

namespace {

int crop_amount(double value, int dim, CropSpec::Mode mode) {
  if (mode == CropSpec::Mode::pixels) {
    if (value < 0) throw DomainError("crop pixels must be >= 0");
    return static_cast<int>(std::llround(value));
  }
  if (value < 0.0 || value > 0.45) {
    throw DomainError("crop fractions must lie in [0, 0.45]");
  }
  return static_cast<int>(std::llround(value * dim));
}

}  // namespace

Raster crop_frame(const Raster& img, const CropSpec& spec) {
  const int top = crop_amount(spec.top, img.height, spec.mode);
  const int bottom = crop_amount(spec.bottom, img.height, spec.mode);
  const int left = crop_amount(spec.left, img.width, spec.mode);
  const int right = crop_amount(spec.right, img.width, spec.mode);
  const int width = img.width - left - right;
  const int height = img.height - top - bottom;
  if (width < kMinCropSide || height < kMinCropSide) {
    throw DomainError("crop leaves " + std::to_string(width) + "x" +
                      std::to_string(height) + ", below the 16x16 minimum");
  }
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return img;
  Raster out(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    std::copy_n(&img.data[(static_cast<std::size_t>(y + top) * img.width + left) *
                          img.channels],
                static_cast<std::size_t>(width) * img.channels,
                &out.data[static_cast<std::size_t>(y) * width * img.channels]);
  }
  return out;
}

GrayImage to_grayscale(const Raster& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DomainError("to_grayscale needs 1 or 3 channels");
  }
  GrayImage out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        out(y, x) = img.at(x, y);
      } else {
        out(y, x) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                    0.114 * img.at(x, y, 2);
      }
    }
  }
  return out;
}

Eigen::VectorXd gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0.0) || radius < 1) {
    throw DomainError("gaussian_kernel needs sigma > 0 and radius >= 1");
  }
  Eigen::VectorXd w(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w(i + radius) = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += w(i + radius);
  }
  // Sequential sum, so normalization does not depend on vectorization width.
  for (auto& v : w) v /= total;
  return w;
}

GrayImage gaussian_blur(const GrayImage& img, const CannyParams& params) {
  const Eigen::VectorXd w = gaussian_kernel(params.sigma, params.radius);
  const int r = params.radius;
  const Eigen::Index rows = img.rows();
  const Eigen::Index cols = img.cols();
  GrayImage horizontal(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const Eigen::Index xs = std::clamp<Eigen::Index>(x + d, 0, cols - 1);
        acc += w(d + r) * img(y, xs);
      }
      horizontal(y, x) = acc;
    }
  }
  GrayImage out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const Eigen::Index ys = std::clamp<Eigen::Index>(y + d, 0, rows - 1);
        acc += w(d + r) * horizontal(ys, x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

Gradients sobel_gradients(const GrayImage& img) {
  if (img.rows() < 3 || img.cols() < 3) {
    throw DomainError("sobel_gradients needs at least 3x3");
  }
  static constexpr double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const Eigen::Index rows = img.rows();
  const Eigen::Index cols = img.cols();
  Gradients g{GrayImage(rows, cols), GrayImage(rows, cols)};
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double sx = 0.0;
      double sy = 0.0;
      for (int j = 0; j < 3; ++j) {
        const Eigen::Index ys = std::clamp<Eigen::Index>(y + j - 1, 0, rows - 1);
        for (int i = 0; i < 3; ++i) {
          const Eigen::Index xs =
              std::clamp<Eigen::Index>(x + i - 1, 0, cols - 1);
          sx += kx[j][i] * img(ys, xs);
          sy += kx[i][j] * img(ys, xs);
        }
      }
      g.gx(y, x) = sx;
      g.gy(y, x) = sy;
    }
  }
  return g;
}

int direction_bin(double gx, double gy) {
  double deg = std::atan2(gy, gx) * (180.0 / std::numbers::pi);
  if (deg < 0.0) deg += 180.0;
  if (deg >= 180.0) deg -= 180.0;
  // Exact bin boundaries fall to the lower bin.
  if (deg <= 22.5) return 0;
  if (deg <= 67.5) return 1;
  if (deg <= 112.5) return 2;
  if (deg <= 157.5) return 3;
  return 0;
}

GrayImage non_max_suppression(const GrayImage& gx, const GrayImage& gy) {
  if (gx.rows() != gy.rows() || gx.cols() != gy.cols()) {
    throw ShapeError("non_max_suppression needs matching gradient planes");
  }
  // Neighbor offsets (dx, dy) along the gradient for each bin.
  static constexpr int offsets[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
  const Eigen::Index rows = gx.rows();
  const Eigen::Index cols = gx.cols();
  GrayImage magnitude(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      magnitude(y, x) = std::sqrt(gx(y, x) * gx(y, x) + gy(y, x) * gy(y, x));
    }
  }
  GrayImage out = GrayImage::Zero(rows, cols);
  for (Eigen::Index y = 1; y + 1 < rows; ++y) {
    for (Eigen::Index x = 1; x + 1 < cols; ++x) {
      const int bin = direction_bin(gx(y, x), gy(y, x));
      const int dx = offsets[bin][0];
      const int dy = offsets[bin][1];
      const double m = magnitude(y, x);
      if (m >= magnitude(y + dy, x + dx) && m >= magnitude(y - dy, x - dx)) {
        out(y, x) = m;
      }
    }
  }
  return out;
}

EdgeMap hysteresis_threshold(const GrayImage& suppressed,
                             const CannyParams& params) {
  params.validate();
  const Eigen::Index rows = suppressed.rows();
  const Eigen::Index cols = suppressed.cols();
  EdgeMap edges = EdgeMap::Zero(rows, cols);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> frontier;
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      if (suppressed(y, x) >= params.high_threshold) {
        edges(y, x) = 1;
        frontier.emplace_back(y, x);
      }
    }
  }
  while (!frontier.empty()) {
    const auto [y, x] = frontier.back();
    frontier.pop_back();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const Eigen::Index ny = y + dy;
        const Eigen::Index nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= rows || nx >= cols) continue;
        if (edges(ny, nx) == 0 && suppressed(ny, nx) >= params.low_threshold) {
          edges(ny, nx) = 1;
          frontier.emplace_back(ny, nx);
        }
      }
    }
  }
  return edges;
}

EdgeMap canny(const Raster& img, const CropSpec& crop,
              const CannyParams& params) {
  params.validate();
  const GrayImage gray = to_grayscale(crop_frame(img, crop));
  const Gradients g = sobel_gradients(gaussian_blur(gray, params));
  return hysteresis_threshold(non_max_suppression(g.gx, g.gy), params);
}

Raster edge_to_sketch(const EdgeMap& edges) {
  Raster out(static_cast<int>(edges.cols()), static_cast<int>(edges.rows()), 3,
             255);
  for (Eigen::Index y = 0; y < edges.rows(); ++y) {
    for (Eigen::Index x = 0; x < edges.cols(); ++x) {
      if (edges(y, x) != 0) {
        for (int c = 0; c < 3; ++c) {
          out.at(static_cast<int>(x), static_cast<int>(y), c) = 0;
        }
      }
    }
  }
  return out;
}

}  // namespace shanshui::data
