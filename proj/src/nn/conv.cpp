#include "apcodec/nn/conv.hpp"

#include <string>
#include <vector>

#include "apcodec/error.hpp"

namespace apcodec::nn {

namespace {

std::vector<Var> with_optional(std::initializer_list<Var> required, const Var& optional) {
  std::vector<Var> v(required);
  if (optional.defined()) v.push_back(optional);
  return v;
}

void check_bias(const Var& bias, Index out, const char* op) {
  if (bias.defined() && (bias.rows() != out || bias.cols() != 1))
    throw ValidationError(std::string(op) + ": bias must be (" + std::to_string(out) + " x 1)");
}

}  // namespace

Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dGeometry& g) {
  const Index cin = x.rows();
  const Index frames = x.cols();
  const Index k = g.kernel;
  if (k < 1 || g.stride < 1 || g.dilation < 1 || g.out_frames < 0)
    throw ValidationError("conv1d: invalid geometry");
  if (weight.cols() != k * cin)
    throw ValidationError("conv1d: expected " + std::to_string(cin) + " input channels, weight has " +
                          std::to_string(weight.cols() / k));
  check_bias(bias, weight.rows(), "conv1d");

  Matrix cols = Matrix::Zero(k * cin, g.out_frames);
  for (Index j = 0; j < g.out_frames; ++j)
    for (Index tap = 0; tap < k; ++tap) {
      const Index src = j * g.stride + g.offset + tap * g.dilation;
      if (src >= 0 && src < frames) cols.block(tap * cin, j, cin, 1) = x.value().col(src);
    }
  Matrix value = weight.value() * cols;
  if (bias.defined()) value.colwise() += bias.value().col(0);

  return make_op(
      std::move(value), with_optional({x, weight}, bias),
      [cols = std::move(cols), g, cin, frames](Node& s) {
        if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.grad * cols.transpose());
        if (s.inputs.size() > 2 && s.inputs[2]->requires_grad)
          s.inputs[2]->accumulate(s.grad.rowwise().sum());
        if (!s.inputs[0]->requires_grad) return;
        const Matrix dcols = s.inputs[1]->value.transpose() * s.grad;
        Matrix& dx = s.inputs[0]->grad_storage();
        for (Index j = 0; j < g.out_frames; ++j)
          for (Index tap = 0; tap < g.kernel; ++tap) {
            const Index src = j * g.stride + g.offset + tap * g.dilation;
            if (src >= 0 && src < frames) dx.col(src) += dcols.block(tap * cin, j, cin, 1);
          }
      },
      "conv1d");
}

Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias, Index kernel, Index dilation,
                     Index offset) {
  const Index c = x.rows();
  const Index frames = x.cols();
  if (weight.rows() != c || weight.cols() != kernel)
    throw ValidationError("depthwise_conv1d: weight must be (channels x kernel)");
  check_bias(bias, c, "depthwise_conv1d");

  // Valid output range [lo, hi) for a tap shifted by `shift` frames.
  auto range = [frames](Index shift) {
    const Index lo = std::max<Index>(0, -shift);
    const Index hi = std::min<Index>(frames, frames - shift);
    return std::pair{lo, std::max(lo, hi)};
  };

  Matrix value = Matrix::Zero(c, frames);
  for (Index tap = 0; tap < kernel; ++tap) {
    const Index shift = offset + tap * dilation;
    const auto [lo, hi] = range(shift);
    if (hi > lo)
      value.middleCols(lo, hi - lo).array() +=
          x.value().middleCols(lo + shift, hi - lo).array().colwise() * weight.value().col(tap).array();
  }
  if (bias.defined()) value.colwise() += bias.value().col(0);

  return make_op(
      std::move(value), with_optional({x, weight}, bias),
      [kernel, dilation, offset, range](Node& s) {
        const Matrix& xv = s.inputs[0]->value;
        const Matrix& w = s.inputs[1]->value;
        const bool want_x = s.inputs[0]->requires_grad;
        const bool want_w = s.inputs[1]->requires_grad;
        Matrix dw = want_w ? Matrix::Zero(w.rows(), w.cols()) : Matrix();
        for (Index tap = 0; tap < kernel; ++tap) {
          const Index shift = offset + tap * dilation;
          const auto [lo, hi] = range(shift);
          if (hi <= lo) continue;
          const auto g = s.grad.middleCols(lo, hi - lo);
          if (want_x)
            s.inputs[0]->grad_storage().middleCols(lo + shift, hi - lo).array() +=
                g.array().colwise() * w.col(tap).array();
          if (want_w) dw.col(tap) = g.cwiseProduct(xv.middleCols(lo + shift, hi - lo)).rowwise().sum();
        }
        if (want_w) s.inputs[1]->accumulate(dw);
        if (s.inputs.size() > 2 && s.inputs[2]->requires_grad)
          s.inputs[2]->accumulate(s.grad.rowwise().sum());
      },
      "depthwise_conv1d");
}

Var conv_transpose1d(const Var& x, const Var& weight, const Var& bias, Index kernel, Index stride,
                     Index trim_front, Index out_frames) {
  const Index cin = x.rows();
  const Index frames = x.cols();
  if (weight.cols() != cin || weight.rows() % kernel != 0)
    throw ValidationError("conv_transpose1d: weight must be (kernel * out x in) with in = " +
                          std::to_string(cin));
  const Index cout = weight.rows() / kernel;
  check_bias(bias, cout, "conv_transpose1d");
  const Index full = frames == 0 ? 0 : (frames - 1) * stride + kernel;
  if (trim_front < 0 || trim_front + out_frames > full)
    throw ValidationError("conv_transpose1d: output window exceeds the full output");

  const Matrix z = weight.value() * x.value();
  Matrix value = Matrix::Zero(cout, out_frames);
  for (Index i = 0; i < frames; ++i)
    for (Index n = 0; n < kernel; ++n) {
      const Index j = i * stride + n - trim_front;
      if (j >= 0 && j < out_frames) value.col(j) += z.block(n * cout, i, cout, 1);
    }
  if (bias.defined()) value.colwise() += bias.value().col(0);

  return make_op(
      std::move(value), with_optional({x, weight}, bias),
      [kernel, stride, trim_front, out_frames, cout, frames](Node& s) {
        Matrix dz = Matrix::Zero(kernel * cout, frames);
        for (Index i = 0; i < frames; ++i)
          for (Index n = 0; n < kernel; ++n) {
            const Index j = i * stride + n - trim_front;
            if (j >= 0 && j < out_frames) dz.block(n * cout, i, cout, 1) = s.grad.col(j);
          }
        if (s.inputs[0]->requires_grad) s.inputs[0]->accumulate(s.inputs[1]->value.transpose() * dz);
        if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(dz * s.inputs[0]->value.transpose());
        if (s.inputs.size() > 2 && s.inputs[2]->requires_grad)
          s.inputs[2]->accumulate(s.grad.rowwise().sum());
      },
      "conv_transpose1d");
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight.cols() != x.rows())
    throw ValidationError("linear: expected " + std::to_string(weight.cols()) + " input channels, got " +
                          std::to_string(x.rows()));
  check_bias(bias, weight.rows(), "linear");
  Matrix value = weight.value() * x.value();
  if (bias.defined()) value.colwise() += bias.value().col(0);
  return make_op(std::move(value), with_optional({x, weight}, bias),
                 [](Node& s) {
                   if (s.inputs[0]->requires_grad)
                     s.inputs[0]->accumulate(s.inputs[1]->value.transpose() * s.grad);
                   if (s.inputs[1]->requires_grad)
                     s.inputs[1]->accumulate(s.grad * s.inputs[0]->value.transpose());
                   if (s.inputs.size() > 2 && s.inputs[2]->requires_grad)
                     s.inputs[2]->accumulate(s.grad.rowwise().sum());
                 },
                 "linear");
}

Var conv2d(const Var& x, Index height, Index width, const Var& weight, const Var& bias,
           const Conv2dGeometry& g) {
  const Index cin = x.rows();
  if (x.cols() != height * width) throw ValidationError("conv2d: input is not height x width");
  const Index taps = g.kernel_h * g.kernel_w;
  if (weight.cols() != taps * cin)
    throw ValidationError("conv2d: weight expects " + std::to_string(weight.cols() / taps) +
                          " input channels, got " + std::to_string(cin));
  check_bias(bias, weight.rows(), "conv2d");
  const Index oh = g.out_height(height);
  const Index ow = g.out_width(width);
  if (oh < 1 || ow < 1) throw ValidationError("conv2d: input smaller than the kernel");

  // im2col buffer, kept for the weight gradient.
  Matrix cols = Matrix::Zero(taps * cin, oh * ow);
  for (Index i = 0; i < oh; ++i)
    for (Index j = 0; j < ow; ++j)
      for (Index a = 0; a < g.kernel_h; ++a) {
        const Index h = i * g.stride_h - g.pad_h + a;
        if (h < 0 || h >= height) continue;
        for (Index b = 0; b < g.kernel_w; ++b) {
          const Index w = j * g.stride_w - g.pad_w + b;
          if (w < 0 || w >= width) continue;
          cols.block((a * g.kernel_w + b) * cin, i * ow + j, cin, 1) = x.value().col(h * width + w);
        }
      }
  Matrix value = weight.value() * cols;
  if (bias.defined()) value.colwise() += bias.value().col(0);

  return make_op(
      std::move(value), with_optional({x, weight}, bias),
      [cols = std::move(cols), g, cin, height, width, oh, ow](Node& s) {
        if (s.inputs[1]->requires_grad) s.inputs[1]->accumulate(s.grad * cols.transpose());
        if (s.inputs.size() > 2 && s.inputs[2]->requires_grad)
          s.inputs[2]->accumulate(s.grad.rowwise().sum());
        if (!s.inputs[0]->requires_grad) return;
        const Matrix dcols = s.inputs[1]->value.transpose() * s.grad;
        Matrix& dx = s.inputs[0]->grad_storage();
        for (Index i = 0; i < oh; ++i)
          for (Index j = 0; j < ow; ++j)
            for (Index a = 0; a < g.kernel_h; ++a) {
              const Index h = i * g.stride_h - g.pad_h + a;
              if (h < 0 || h >= height) continue;
              for (Index b = 0; b < g.kernel_w; ++b) {
                const Index w = j * g.stride_w - g.pad_w + b;
                if (w < 0 || w >= width) continue;
                dx.col(h * width + w) += dcols.block((a * g.kernel_w + b) * cin, i * ow + j, cin, 1);
              }
            }
      },
      "conv2d");
}

}  // namespace apcodec::nn
