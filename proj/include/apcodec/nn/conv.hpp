#pragma once

// Convolution primitives over (channels x frames) feature maps.
//
// conv1d reads input frame j * stride + offset + tap * dilation for output
// frame j; positions outside the input are zeros. Choosing `offset` sets the
// padding: -(k - 1) * dilation / 2 is the usual "same" convolution, while a
// negative offset with the last tap at or before the output's own block gives
// a causal layer.

#include "apcodec/nn/autograd.hpp"

namespace apcodec::nn {

struct Conv1dGeometry {
  Index kernel = 1;
  Index stride = 1;
  Index dilation = 1;
  Index offset = 0;
  Index out_frames = 0;
};

/// weight is (out x kernel * in) with column index tap * in + channel; bias
/// is (out x 1) or undefined.
Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dGeometry& g);

/// Per-channel convolution, stride 1; weight is (channels x kernel).
Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias, Index kernel, Index dilation,
                     Index offset);

/// Transposed convolution. weight is (kernel * out x in), rows for tap n at
/// [n * out, (n + 1) * out). Input frame i writes full-output frames
/// i * stride + n; the returned window starts at `trim_front` and has
/// `out_frames` columns.
Var conv_transpose1d(const Var& x, const Var& weight, const Var& bias, Index kernel, Index stride,
                     Index trim_front, Index out_frames);

/// y = W x + b, a per-frame affine map.
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv2dGeometry {
  Index kernel_h = 1, kernel_w = 1;
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 0, pad_w = 0;

  Index out_height(Index h) const { return (h + 2 * pad_h - kernel_h) / stride_h + 1; }
  Index out_width(Index w) const { return (w + 2 * pad_w - kernel_w) / stride_w + 1; }
};

/// 2-D convolution over maps stored as (channels x height * width), pixel
/// (h, w) at column h * width + w. weight is (out x kh * kw * in) with column
/// index (a * kw + b) * in + channel.
Var conv2d(const Var& x, Index height, Index width, const Var& weight, const Var& bias,
           const Conv2dGeometry& g);

}  // namespace apcodec::nn
