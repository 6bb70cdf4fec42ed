#pragma once

#include <string>

#include <Eigen/Core>

#include "shanshui/errors.hpp"

namespace shanshui::nn {

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Channel-major feature map: data is channels x (height * width), one plane
// per row.
template <typename Scalar>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix<Scalar> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(c, h * w) {}

  static Tensor3 zeros(int c, int h, int w) {
    Tensor3 t(c, h, w);
    t.data.setZero();
    return t;
  }
  static Tensor3 constant(int c, int h, int w, Scalar v) {
    Tensor3 t(c, h, w);
    t.data.setConstant(v);
    return t;
  }

  Scalar& operator()(int c, int y, int x) { return data(c, y * width + x); }
  Scalar operator()(int c, int y, int x) const { return data(c, y * width + x); }

  Eigen::Index size() const { return data.size(); }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename Other>
  Tensor3<Other> cast() const {
    Tensor3<Other> t;
    t.channels = channels;
    t.height = height;
    t.width = width;
    t.data = data.template cast<Other>();
    return t;
  }
};

// 3-channel image in [-1, 1].
template <typename Scalar>
using TensorImage = Tensor3<Scalar>;

// One-channel grid of patch scores.
template <typename Scalar>
using PatchScoreMap = Tensor3<Scalar>;

template <typename Scalar>
void require_same_shape(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     std::to_string(a.channels) + "x" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.channels) + "x" + std::to_string(b.height) +
                     "x" + std::to_string(b.width));
  }
}

}  // namespace shanshui::nn
