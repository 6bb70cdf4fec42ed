#pragma once

// Layer primitives with explicit backward passes. Convolutions are evaluated
// as one GEMM per kernel tap over a strided gather of the input, which keeps
// the working set at channels x output-pixels regardless of kernel size.

#include <cmath>
#include <string>
#include <type_traits>

#include <Eigen/Core>

#include "shanshui/tensor.hpp"

namespace shanshui::nn {

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Keeps arguments other than the input tensor out of template deduction so
// nullptr and Eigen expressions bind to them.
template <typename Scalar>
using Param = std::type_identity_t<RowMatrix<Scalar>>;

template <typename Scalar>
using TensorArg = std::type_identity_t<Tensor3<Scalar>>;

namespace detail {

// patch(c, oy*out_w + ox) = src(c, y0 + oy*stride, x0 + ox*stride), zero when
// the source position falls outside src.
template <typename Scalar>
void gather_taps(const Tensor3<Scalar>& src, int y0, int x0, int stride,
                 int out_h, int out_w, RowMatrix<Scalar>& patch) {
  patch.resize(src.channels, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < src.channels; ++c) {
    const Scalar* in = src.data.row(c).data();
    Scalar* out = patch.row(c).data();
    for (int oy = 0; oy < out_h; ++oy) {
      const int y = y0 + oy * stride;
      Scalar* row = out + static_cast<std::ptrdiff_t>(oy) * out_w;
      if (y < 0 || y >= src.height) {
        for (int ox = 0; ox < out_w; ++ox) row[ox] = Scalar(0);
        continue;
      }
      const Scalar* in_row = in + static_cast<std::ptrdiff_t>(y) * src.width;
      for (int ox = 0; ox < out_w; ++ox) {
        const int x = x0 + ox * stride;
        row[ox] = (x >= 0 && x < src.width) ? in_row[x] : Scalar(0);
      }
    }
  }
}

// Adjoint of gather_taps: dst(c, y0 + oy*stride, x0 + ox*stride) += patch.
template <typename Scalar>
void scatter_taps(const RowMatrix<Scalar>& patch, int y0, int x0, int stride,
                  int out_h, int out_w, Tensor3<Scalar>& dst) {
  for (int c = 0; c < dst.channels; ++c) {
    const Scalar* in = patch.row(c).data();
    Scalar* out = dst.data.row(c).data();
    for (int oy = 0; oy < out_h; ++oy) {
      const int y = y0 + oy * stride;
      if (y < 0 || y >= dst.height) continue;
      const Scalar* row = in + static_cast<std::ptrdiff_t>(oy) * out_w;
      Scalar* out_row = out + static_cast<std::ptrdiff_t>(y) * dst.width;
      for (int ox = 0; ox < out_w; ++ox) {
        const int x = x0 + ox * stride;
        if (x >= 0 && x < dst.width) out_row[x] += row[ox];
      }
    }
  }
}

inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace detail

inline int conv_output_size(int input, int kernel, int stride) {
  return (input - kernel) / stride + 1;
}

inline int conv_transpose_output_size(int input, int kernel, int stride,
                                      int padding, int output_padding) {
  return (input - 1) * stride - 2 * padding + kernel + output_padding;
}

// Valid (unpadded) correlation. weight: out_ch x (in_ch * k * k), laid out
// [out][in][ky][kx]. bias may be null.
template <typename Scalar>
Tensor3<Scalar> conv2d(const Tensor3<Scalar>& x, const Param<Scalar>& weight,
                       const Param<Scalar>* bias, int kernel, int stride) {
  const int kk = kernel * kernel;
  if (weight.cols() != static_cast<Eigen::Index>(x.channels) * kk) {
    throw ShapeError("conv2d: weight expects " +
                     std::to_string(weight.cols() / kk) + " input channels, got " +
                     std::to_string(x.channels));
  }
  if (x.height < kernel || x.width < kernel) {
    throw ShapeError("conv2d: input " + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + " smaller than kernel");
  }
  const int out_h = conv_output_size(x.height, kernel, stride);
  const int out_w = conv_output_size(x.width, kernel, stride);
  auto y = Tensor3<Scalar>::zeros(static_cast<int>(weight.rows()), out_h, out_w);
  RowMatrix<Scalar> patch;
  RowMatrix<Scalar> tap;
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      detail::gather_taps(x, ky, kx, stride, out_h, out_w, patch);
      tap = weight(Eigen::all, Eigen::seqN(ky * kernel + kx, x.channels, kk));
      y.data.noalias() += tap * patch;
    }
  }
  if (bias) y.data.colwise() += bias->col(0);
  return y;
}

// Accumulates into whichever of dweight/dbias are non-null and writes the
// input gradient to dx when it is non-null.
template <typename Scalar>
void conv2d_backward(const Tensor3<Scalar>& x, const Param<Scalar>& weight,
                     int kernel, int stride, const Tensor3<Scalar>& dy,
                     TensorArg<Scalar>* dx, Param<Scalar>* dweight,
                     Param<Scalar>* dbias) {
  const int kk = kernel * kernel;
  if (dx) *dx = Tensor3<Scalar>::zeros(x.channels, x.height, x.width);
  RowMatrix<Scalar> patch;
  RowMatrix<Scalar> tap;
  RowMatrix<Scalar> dpatch;
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      const auto cols = Eigen::seqN(ky * kernel + kx, x.channels, kk);
      if (dweight) {
        detail::gather_taps(x, ky, kx, stride, dy.height, dy.width, patch);
        (*dweight)(Eigen::all, cols) += dy.data * patch.transpose();
      }
      if (dx) {
        tap = weight(Eigen::all, cols);
        dpatch.noalias() = tap.transpose() * dy.data;
        detail::scatter_taps(dpatch, ky, kx, stride, dy.height, dy.width, *dx);
      }
    }
  }
  if (dbias) dbias->col(0) += dy.data.rowwise().sum();
}

// Transposed convolution. weight: in_ch x (out_ch * k * k), laid out
// [in][out][ky][kx].
template <typename Scalar>
Tensor3<Scalar> conv_transpose2d(const Tensor3<Scalar>& x,
                                 const Param<Scalar>& weight,
                                 const Param<Scalar>* bias, int kernel,
                                 int stride, int padding, int output_padding) {
  const int kk = kernel * kernel;
  if (weight.rows() != x.channels) {
    throw ShapeError("conv_transpose2d: weight expects " +
                     std::to_string(weight.rows()) + " input channels, got " +
                     std::to_string(x.channels));
  }
  const int out_ch = static_cast<int>(weight.cols() / kk);
  const int out_h =
      conv_transpose_output_size(x.height, kernel, stride, padding, output_padding);
  const int out_w =
      conv_transpose_output_size(x.width, kernel, stride, padding, output_padding);
  auto y = Tensor3<Scalar>::zeros(out_ch, out_h, out_w);
  RowMatrix<Scalar> tap;
  RowMatrix<Scalar> contrib;
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      tap = weight(Eigen::all, Eigen::seqN(ky * kernel + kx, out_ch, kk));
      contrib.noalias() = tap.transpose() * x.data;
      detail::scatter_taps(contrib, ky - padding, kx - padding, stride, x.height,
                           x.width, y);
    }
  }
  if (bias) y.data.colwise() += bias->col(0);
  return y;
}

template <typename Scalar>
void conv_transpose2d_backward(const Tensor3<Scalar>& x,
                               const Param<Scalar>& weight, int kernel,
                               int stride, int padding, const Tensor3<Scalar>& dy,
                               TensorArg<Scalar>* dx, Param<Scalar>* dweight,
                               Param<Scalar>* dbias) {
  const int kk = kernel * kernel;
  const int out_ch = dy.channels;
  if (dx) *dx = Tensor3<Scalar>::zeros(x.channels, x.height, x.width);
  RowMatrix<Scalar> dpatch;
  RowMatrix<Scalar> tap;
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      const auto cols = Eigen::seqN(ky * kernel + kx, out_ch, kk);
      detail::gather_taps(dy, ky - padding, kx - padding, stride, x.height,
                          x.width, dpatch);
      if (dweight) (*dweight)(Eigen::all, cols) += x.data * dpatch.transpose();
      if (dx) {
        tap = weight(Eigen::all, cols);
        dx->data.noalias() += tap * dpatch;
      }
    }
  }
  if (dbias) dbias->col(0) += dy.data.rowwise().sum();
}

template <typename Scalar>
Tensor3<Scalar> zero_pad(const Tensor3<Scalar>& x, int pad) {
  auto y = Tensor3<Scalar>::zeros(x.channels, x.height + 2 * pad, x.width + 2 * pad);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < x.height; ++r)
      for (int col = 0; col < x.width; ++col) y(c, r + pad, col + pad) = x(c, r, col);
  return y;
}

template <typename Scalar>
Tensor3<Scalar> zero_pad_backward(const Tensor3<Scalar>& dy, int pad) {
  Tensor3<Scalar> dx(dy.channels, dy.height - 2 * pad, dy.width - 2 * pad);
  for (int c = 0; c < dx.channels; ++c)
    for (int r = 0; r < dx.height; ++r)
      for (int col = 0; col < dx.width; ++col) dx(c, r, col) = dy(c, r + pad, col + pad);
  return dx;
}

// Mirror padding without repeating the border sample; needs pad < dim.
template <typename Scalar>
Tensor3<Scalar> reflect_pad(const Tensor3<Scalar>& x, int pad) {
  if (pad >= x.height || pad >= x.width) {
    throw ShapeError("reflect_pad: pad " + std::to_string(pad) +
                     " needs input larger than " + std::to_string(x.height) +
                     "x" + std::to_string(x.width));
  }
  Tensor3<Scalar> y(x.channels, x.height + 2 * pad, x.width + 2 * pad);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < y.height; ++r) {
      const int sr = detail::reflect_index(r - pad, x.height);
      for (int col = 0; col < y.width; ++col)
        y(c, r, col) = x(c, sr, detail::reflect_index(col - pad, x.width));
    }
  return y;
}

template <typename Scalar>
Tensor3<Scalar> reflect_pad_backward(const Tensor3<Scalar>& dy, int pad) {
  auto dx = Tensor3<Scalar>::zeros(dy.channels, dy.height - 2 * pad,
                                   dy.width - 2 * pad);
  for (int c = 0; c < dy.channels; ++c)
    for (int r = 0; r < dy.height; ++r) {
      const int sr = detail::reflect_index(r - pad, dx.height);
      for (int col = 0; col < dy.width; ++col)
        dx(c, sr, detail::reflect_index(col - pad, dx.width)) += dy(c, r, col);
    }
  return dx;
}

// Per-channel statistics kept from the forward pass.
template <typename Scalar>
struct InstanceNormCache {
  RowMatrix<Scalar> normalized;
  ColVector<Scalar> inv_std;
};

inline constexpr double kInstanceNormEpsilon = 1e-5;

// y = scale * (x - mean) / sqrt(var + eps) + offset, statistics per channel
// over the spatial plane (biased variance).
template <typename Scalar>
Tensor3<Scalar> instance_norm(const Tensor3<Scalar>& x,
                              const Param<Scalar>& scale,
                              const Param<Scalar>& offset,
                              std::type_identity_t<InstanceNormCache<Scalar>>* cache) {
  const Scalar n = static_cast<Scalar>(x.height * x.width);
  const ColVector<Scalar> mean = x.data.rowwise().sum() / n;
  RowMatrix<Scalar> centered = x.data.colwise() - mean;
  const ColVector<Scalar> var = centered.array().square().rowwise().sum() / n;
  const ColVector<Scalar> inv_std =
      (var.array() + Scalar(kInstanceNormEpsilon)).rsqrt();
  Tensor3<Scalar> y(x.channels, x.height, x.width);
  RowMatrix<Scalar> normalized = inv_std.asDiagonal() * centered;
  y.data = (scale.col(0).asDiagonal() * normalized).colwise() + offset.col(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return y;
}

template <typename Scalar>
Tensor3<Scalar> instance_norm_backward(const Tensor3<Scalar>& dy,
                                       const InstanceNormCache<Scalar>& cache,
                                       const Param<Scalar>& scale,
                                       Param<Scalar>* dscale,
                                       Param<Scalar>* doffset) {
  const Scalar n = static_cast<Scalar>(dy.height * dy.width);
  const ColVector<Scalar> sum_dy = dy.data.rowwise().sum();
  const ColVector<Scalar> sum_dy_xhat =
      (dy.data.array() * cache.normalized.array()).rowwise().sum().matrix();
  if (dscale) dscale->col(0) += sum_dy_xhat;
  if (doffset) doffset->col(0) += sum_dy;
  const ColVector<Scalar> mean_dy = sum_dy / n;
  const ColVector<Scalar> mean_dy_xhat = sum_dy_xhat / n;
  Tensor3<Scalar> dx(dy.channels, dy.height, dy.width);
  RowMatrix<Scalar> inner = (dy.data.colwise() - mean_dy) -
                            mean_dy_xhat.asDiagonal() * cache.normalized;
  dx.data = (scale.col(0).array() * cache.inv_std.array()).matrix().asDiagonal() * inner;
  return dx;
}

template <typename Scalar>
Tensor3<Scalar> relu(Tensor3<Scalar> x) {
  x.data = x.data.cwiseMax(Scalar(0));
  return x;
}

template <typename Scalar>
Tensor3<Scalar> relu_backward(const Tensor3<Scalar>& x, Tensor3<Scalar> dy) {
  dy.data = (x.data.array() > Scalar(0)).select(dy.data, Scalar(0));
  return dy;
}

inline constexpr double kLeakySlope = 0.2;

template <typename Scalar>
Tensor3<Scalar> leaky_relu(Tensor3<Scalar> x) {
  x.data = (x.data.array() > Scalar(0)).select(x.data, x.data * Scalar(kLeakySlope));
  return x;
}

template <typename Scalar>
Tensor3<Scalar> leaky_relu_backward(const Tensor3<Scalar>& x, Tensor3<Scalar> dy) {
  dy.data = (x.data.array() > Scalar(0)).select(dy.data, dy.data * Scalar(kLeakySlope));
  return dy;
}

template <typename Scalar>
Tensor3<Scalar> tanh(Tensor3<Scalar> x) {
  x.data = x.data.array().tanh().matrix();
  return x;
}

// Takes the forward output y = tanh(x).
template <typename Scalar>
Tensor3<Scalar> tanh_backward(const Tensor3<Scalar>& y, Tensor3<Scalar> dy) {
  dy.data = (dy.data.array() * (Scalar(1) - y.data.array().square())).matrix();
  return dy;
}

}  // namespace shanshui::nn
