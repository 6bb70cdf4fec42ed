#pragma once

#include <algorithm>
#include <cmath>

#include "shanshui/raster.hpp"
#include "shanshui/tensor.hpp"

namespace shanshui::nn {

// v / 127.5 - 1 per channel; one-channel rasters are replicated to three.
template <typename Scalar>
TensorImage<Scalar> to_tensor(const Raster& img) {
  TensorImage<Scalar> t(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t(c, y, x) = static_cast<Scalar>(img.at(x, y, src_c) / 127.5 - 1.0);
  }
  return t;
}

// Inverse of to_tensor: round-half-up of (v + 1) * 127.5, clamped to [0, 255].
template <typename Scalar>
Raster to_raster(const TensorImage<Scalar>& t) {
  if (t.channels != 3) throw ShapeError("to_raster needs a 3-channel tensor");
  Raster img(t.width, t.height, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        const double v = std::floor((static_cast<double>(t(c, y, x)) + 1.0) * 127.5 + 0.5);
        img.at(x, y, c) =
            static_cast<std::uint8_t>(std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 255.0));
      }
  return img;
}

}  // namespace shanshui::nn
