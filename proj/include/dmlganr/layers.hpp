#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { ReLU, LeakyReLU, Tanh, Sigmoid };

struct ActivationKind {
  Activation type = Activation::ReLU;
  double negative_slope = 0.2;  // LeakyReLU only

  static ActivationKind relu() { return {Activation::ReLU, 0.0}; }
  static ActivationKind leaky_relu(double slope = 0.2) {
    if (!(slope > 0.0 && slope < 1.0)) {
      throw ValidationError("LeakyReLU negative slope must lie in (0, 1)");
    }
    return {Activation::LeakyReLU, slope};
  }
  static ActivationKind tanh() { return {Activation::Tanh, 0.0}; }
  static ActivationKind sigmoid() { return {Activation::Sigmoid, 0.0}; }
};

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar activate(const ActivationKind& kind, Scalar z) {
  switch (kind.type) {
    case Activation::ReLU: return z > 0 ? z : Scalar(0);
    case Activation::LeakyReLU: return z > 0 ? z : Scalar(kind.negative_slope) * z;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Sigmoid: return sigmoid(z);
  }
  return z;
}

/// Derivative evaluated at the pre-activation.
template <typename Scalar>
Scalar activate_deriv(const ActivationKind& kind, Scalar z) {
  switch (kind.type) {
    case Activation::ReLU: return z > 0 ? Scalar(1) : Scalar(0);
    case Activation::LeakyReLU: return z > 0 ? Scalar(1) : Scalar(kind.negative_slope);
    case Activation::Tanh: {
      const Scalar t = std::tanh(z);
      return Scalar(1) - t * t;
    }
    case Activation::Sigmoid: {
      const Scalar s = sigmoid(z);
      return s * (Scalar(1) - s);
    }
  }
  return Scalar(1);
}

template <typename Scalar>
BasicTensor<Scalar> activate(const ActivationKind& kind, const BasicTensor<Scalar>& z) {
  BasicTensor<Scalar> out(z.shape());
  out.vec() = z.vec().unaryExpr([&](Scalar v) { return activate(kind, v); });
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> activate_deriv(const ActivationKind& kind, const BasicTensor<Scalar>& z) {
  BasicTensor<Scalar> out(z.shape());
  out.vec() = z.vec().unaryExpr([&](Scalar v) { return activate_deriv(kind, v); });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvGeometry {
  Index channels, height, width;  // input
  Index kernel_h, kernel_w;
  Index stride, pad;

  Index out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  Index out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  Index patch() const { return channels * kernel_h * kernel_w; }
};

namespace detail {

inline void check_conv_args(Index stride, Index pad) {
  if (stride < 1) throw DimensionError("convolution stride must be >= 1");
  if (pad < 0) throw DimensionError("convolution padding must be >= 0");
}

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, Index stride, Index pad) {
  check_conv_args(stride, pad);
  if (input.size() != 3) throw DimensionError("conv2d expects a CHW input, got " + shape_string(input));
  if (kernels.size() != 4) throw DimensionError("conv2d expects OIHW kernels, got " + shape_string(kernels));
  if (kernels[1] != input[0]) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(input) + ", kernels " +
                         shape_string(kernels));
  }
  ConvGeometry g{input[0], input[1], input[2], kernels[2], kernels[3], stride, pad};
  if (g.height + 2 * pad < g.kernel_h || g.width + 2 * pad < g.kernel_w || g.out_h() <= 0 ||
      g.out_w() <= 0) {
    throw DimensionError("conv2d output extent is not positive for input " + shape_string(input));
  }
  return g;
}

/// Patch matrix: one row per (channel, ky, kx), one column per output cell.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Scalar* in, const ConvGeometry& g) {
  const Index oh = g.out_h(), ow = g.out_w();
  RowMatrix<Scalar> cols(g.patch(), oh * ow);
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* plane = in + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        Scalar* dst = cols.row(row).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            dst[oy * ow + ox] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                    ? plane[iy * g.width + ix]
                                    : Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-adds patch columns back into the image.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* out) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* plane = out + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const Scalar* src = cols.row(row).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with zero padding. input CHW, kernels OIHW, bias [O].
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                           const BasicTensor<Scalar>& bias, Index stride, Index pad) {
  const ConvGeometry g = detail::conv_geometry(input.shape(), kernels.shape(), stride, pad);
  const Index out_c = kernels.dim(0);
  if (bias.size() != out_c) throw DimensionError("conv2d bias length must equal output channels");
  const auto cols = detail::im2col(input.data(), g);
  BasicTensor<Scalar> out({out_c, g.out_h(), g.out_w()});
  auto out_m = out.matrix(out_c, g.out_h() * g.out_w());
  out_m.noalias() = kernels.matrix(out_c, g.patch()) * cols;
  out_m.colwise() += bias.vec();
  require_finite(out, "conv2d");
  return out;
}

/// Input extents a transposed convolution produces when no explicit size is requested.
inline std::array<Index, 2> transposed_extent(Index grad_h, Index grad_w, Index kernel_h,
                                              Index kernel_w, Index stride, Index pad) {
  return {(grad_h - 1) * stride - 2 * pad + kernel_h, (grad_w - 1) * stride - 2 * pad + kernel_w};
}

/// Exact adjoint of conv2d with respect to its input: for every a and g,
/// dot(conv2d(a, k), g) == dot(a, conv2d_transposed(g, k)).
///
/// When the forward stride does not tile the input exactly, pass `input_hw`
/// to recover the forward input extent; uncovered trailing cells are zero.
template <typename Scalar>
BasicTensor<Scalar> conv2d_transposed(const BasicTensor<Scalar>& grad_out,
                                      const BasicTensor<Scalar>& kernels, Index stride, Index pad,
                                      std::optional<std::array<Index, 2>> input_hw = std::nullopt) {
  detail::check_conv_args(stride, pad);
  if (grad_out.rank() != 3 || kernels.rank() != 4 || grad_out.dim(0) != kernels.dim(0)) {
    throw DimensionError("conv2d_transposed: grad " + shape_string(grad_out.shape()) +
                         " does not match kernels " + shape_string(kernels.shape()));
  }
  const Index kh = kernels.dim(2), kw = kernels.dim(3);
  const auto hw = input_hw.value_or(
      transposed_extent(grad_out.dim(1), grad_out.dim(2), kh, kw, stride, pad));
  const ConvGeometry g{kernels.dim(1), hw[0], hw[1], kh, kw, stride, pad};
  if (hw[0] <= 0 || hw[1] <= 0 || g.height + 2 * pad < kh || g.width + 2 * pad < kw ||
      g.out_h() != grad_out.dim(1) || g.out_w() != grad_out.dim(2)) {
    throw DimensionError("conv2d_transposed: grad " + shape_string(grad_out.shape()) +
                         " is not a forward output shape for the requested input extent");
  }
  const Index out_c = kernels.dim(0);
  const RowMatrix<Scalar> cols =
      kernels.matrix(out_c, g.patch()).transpose() * grad_out.matrix(out_c, g.out_h() * g.out_w());
  BasicTensor<Scalar> result({g.channels, g.height, g.width});
  detail::col2im(cols, g, result.data());
  require_finite(result, "conv2d_transposed");
  return result;
}

/// Gradient of dot(conv2d(input, k), grad_out) with respect to the kernels.
template <typename Scalar>
BasicTensor<Scalar> conv2d_kernel_grad(const BasicTensor<Scalar>& input,
                                       const BasicTensor<Scalar>& grad_out, Index kernel_h,
                                       Index kernel_w, Index stride, Index pad) {
  if (grad_out.rank() != 3) throw DimensionError("conv2d_kernel_grad expects an OHW gradient");
  const Index out_c = grad_out.dim(0);
  const Shape kshape{out_c, input.rank() == 3 ? input.dim(0) : -1, kernel_h, kernel_w};
  const ConvGeometry g = detail::conv_geometry(input.shape(), kshape, stride, pad);
  if (g.out_h() != grad_out.dim(1) || g.out_w() != grad_out.dim(2)) {
    throw DimensionError("conv2d_kernel_grad: gradient extent does not match forward output");
  }
  const auto cols = detail::im2col(input.data(), g);
  BasicTensor<Scalar> dk(kshape);
  dk.matrix(out_c, g.patch()).noalias() =
      grad_out.matrix(out_c, g.out_h() * g.out_w()) * cols.transpose();
  return dk;
}

/// Rotates every trailing HW slice by 180 degrees. An involution.
template <typename Scalar>
BasicTensor<Scalar> rotate180(const BasicTensor<Scalar>& kernels) {
  if (kernels.rank() < 2) throw DimensionError("rotate180 needs rank >= 2");
  const Index h = kernels.dim(kernels.rank() - 2), w = kernels.dim(kernels.rank() - 1);
  const Index slices = h * w == 0 ? 0 : kernels.size() / (h * w);
  BasicTensor<Scalar> out(kernels.shape());
  for (Index s = 0; s < slices; ++s) {
    out.vec().segment(s * h * w, h * w) = kernels.vec().segment(s * h * w, h * w).reverse();
  }
  return out;
}

/// The backward pass written as "rotate, then transposed convolution": the
/// gradient is dilated by the stride, padded by (k - 1 - pad) and correlated
/// with the already-rotated kernels with input/output channels swapped.
/// Equal to conv2d_transposed(grad, rotate180(rotated_kernels), ...).
template <typename Scalar>
BasicTensor<Scalar> rotated_transposed_conv(const BasicTensor<Scalar>& rotated_kernels,
                                            const BasicTensor<Scalar>& grad_out, Index stride,
                                            Index pad,
                                            std::optional<std::array<Index, 2>> input_hw = std::nullopt) {
  detail::check_conv_args(stride, pad);
  if (grad_out.rank() != 3 || rotated_kernels.rank() != 4 ||
      grad_out.dim(0) != rotated_kernels.dim(0)) {
    throw DimensionError("rotated_transposed_conv: grad/kernel channel mismatch");
  }
  const Index oc = rotated_kernels.dim(0), ic = rotated_kernels.dim(1);
  const Index kh = rotated_kernels.dim(2), kw = rotated_kernels.dim(3);
  const Index gh = grad_out.dim(1), gw = grad_out.dim(2);
  const auto natural = transposed_extent(gh, gw, kh, kw, stride, pad);
  const auto hw = input_hw.value_or(natural);
  if (hw[0] < natural[0] || hw[1] < natural[1] || hw[0] - natural[0] >= stride ||
      hw[1] - natural[1] >= stride) {
    throw DimensionError("rotated_transposed_conv: requested input extent is inconsistent");
  }

  // Dilate and pad (or crop, when pad > k - 1) the incoming gradient. Input
  // cells past the natural extent are still reached by the last window, so
  // the far side gets the extra rows/columns as zero padding.
  const Index border_h = kh - 1 - pad, border_w = kw - 1 - pad;
  const Index extra_h = hw[0] - natural[0], extra_w = hw[1] - natural[1];
  const Index dil_h = (gh - 1) * stride + 1, dil_w = (gw - 1) * stride + 1;
  const Index ph = dil_h + 2 * border_h + extra_h, pw = dil_w + 2 * border_w + extra_w;
  BasicTensor<Scalar> expanded({oc, ph, pw});
  for (Index c = 0; c < oc; ++c) {
    for (Index y = 0; y < gh; ++y) {
      const Index ty = y * stride + border_h;
      if (ty < 0 || ty >= ph) continue;
      for (Index x = 0; x < gw; ++x) {
        const Index tx = x * stride + border_w;
        if (tx >= 0 && tx < pw) expanded(c, ty, tx) = grad_out(c, y, x);
      }
    }
  }

  BasicTensor<Scalar> swapped({ic, oc, kh, kw});
  for (Index o = 0; o < oc; ++o) {
    for (Index i = 0; i < ic; ++i) {
      swapped.vec().segment((i * oc + o) * kh * kw, kh * kw) =
          rotated_kernels.vec().segment((o * ic + i) * kh * kw, kh * kw);
    }
  }
  return conv2d(expanded, swapped, BasicTensor<Scalar>({ic}), 1, 0);
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Flat argmax (into the CHW input) for every pooled output cell.
struct PoolIndexMap {
  Shape input_shape;
  Shape output_shape;
  std::vector<Index> argmax;
};

template <typename Scalar>
struct PoolResult {
  BasicTensor<Scalar> values;
  PoolIndexMap map;
};

/// Per-channel max over window x window cells, no implicit padding.
/// Ties resolve to the lowest flat index.
template <typename Scalar>
PoolResult<Scalar> max_pool(const BasicTensor<Scalar>& input, Index window, Index stride) {
  if (window < 1 || stride < 1) throw DimensionError("max_pool window and stride must be >= 1");
  if (input.rank() != 3) throw DimensionError("max_pool expects a CHW input");
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (window > h || window > w) {
    throw DimensionError("max_pool window " + std::to_string(window) + " larger than input " +
                         shape_string(input.shape()));
  }
  const Index oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  PoolResult<Scalar> r{BasicTensor<Scalar>({c, oh, ow}), {input.shape(), {c, oh, ow}, {}}};
  r.map.argmax.resize(static_cast<std::size_t>(c * oh * ow));
  Index cell = 0;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++cell) {
        Index best = (ch * h + oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < window; ++ky) {
          for (Index kx = 0; kx < window; ++kx) {
            const Index idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.values[cell] = input[best];
        r.map.argmax[static_cast<std::size_t>(cell)] = best;
      }
    }
  }
  return r;
}

/// Routes each pooled gradient to the recorded argmax cell; adjoint of
/// max_pool for a fixed index map.
template <typename Scalar>
BasicTensor<Scalar> max_unpool(const BasicTensor<Scalar>& grad, const PoolIndexMap& map,
                               const Shape& input_shape) {
  if (grad.shape() != map.output_shape || input_shape != map.input_shape ||
      static_cast<Index>(map.argmax.size()) != grad.size()) {
    throw DimensionError("max_unpool: gradient " + shape_string(grad.shape()) +
                         " does not match pool map " + shape_string(map.output_shape));
  }
  BasicTensor<Scalar> out(input_shape);
  for (Index i = 0; i < grad.size(); ++i) out[map.argmax[static_cast<std::size_t>(i)]] += grad[i];
  return out;
}

}  // namespace dmlganr
