#pragma once

#include <Eigen/Core>

#include "shanshui/raster.hpp"

namespace shanshui::data {

// Amount removed from each side, either in pixels or as a fraction of the
// corresponding dimension.
struct CropSpec {
  enum class Mode { pixels, fraction };

  Mode mode = Mode::fraction;
  double top = 0.05;
  double bottom = 0.05;
  double left = 0.05;
  double right = 0.05;

  static CropSpec fractions(double all) {
    return {Mode::fraction, all, all, all, all};
  }
  static CropSpec none() { return fractions(0.0); }
};

struct CannyParams {
  double sigma = 1.4;
  int radius = 2;
  double low_threshold = 40.0;
  double high_threshold = 100.0;

  void validate() const;
};

inline constexpr int kMinCropSide = 16;

Raster crop_frame(const Raster& img, const CropSpec& spec);

// Y = 0.299 R + 0.587 G + 0.114 B.
GrayImage to_grayscale(const Raster& img);

Eigen::VectorXd gaussian_kernel(double sigma, int radius);

// Separable blur, horizontal pass first, edge-replicate borders.
GrayImage gaussian_blur(const GrayImage& img, const CannyParams& params);

struct Gradients {
  GrayImage gx;
  GrayImage gy;
};

Gradients sobel_gradients(const GrayImage& img);

// Direction bins in degrees, indexable 0..3 -> 0, 45, 90, 135.
int direction_bin(double gx, double gy);

GrayImage non_max_suppression(const GrayImage& gx, const GrayImage& gy);

EdgeMap hysteresis_threshold(const GrayImage& suppressed,
                             const CannyParams& params);

EdgeMap canny(const Raster& img, const CropSpec& crop,
              const CannyParams& params);

// Edges become black ink on white paper, 3 channels.
Raster edge_to_sketch(const EdgeMap& edges);

}  // namespace shanshui::data
