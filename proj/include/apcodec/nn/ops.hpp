#pragma once

#include <span>
#include <vector>

#include "apcodec/nn/autograd.hpp"

namespace apcodec::nn {

// Element-wise arithmetic (operands share a shape).
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, Real s);
Var operator*(Real s, const Var& a);
Var add_scalar(const Var& a, Real s);

/// x + b broadcast along columns; b is (rows x 1).
Var add_bias(const Var& x, const Var& b);
/// x scaled per row by g (rows x 1).
Var scale_rows(const Var& x, const Var& g);
/// Sum of a list of same-shape Vars.
Var sum_all(std::span<const Var> terms);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, Index start, Index count);
Var slice_cols(const Var& x, Index start, Index count);
/// Zero columns before and after.
Var pad_cols(const Var& x, Index before, Index after);
/// Column-major reshape.
Var reshape(const Var& x, Index rows, Index cols);

Var exp(const Var& x, Real max_value);
Var log(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, Real slope);
/// Exact GELU, x * Phi(x) with the normal CDF written via erf.
Var gelu(const Var& x);
Var clamp_min(const Var& x, Real lo);

/// Element-wise phase from real and imaginary parts; (0, 0) maps to 0
/// with a zero gradient there.
Var phase(const Var& re, const Var& im);
/// f(x) = |x - 2 pi round(x / 2 pi)|.
Var anti_wrap(const Var& x);

/// x[i+1, :] - x[i, :] (frequency differences for bins x frames maps).
Var diff_rows(const Var& x);
/// x[:, j+1] - x[:, j] (time differences).
Var diff_cols(const Var& x);

/// 1x1 reductions.
Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);
Var mae(const Var& a, const Var& b);

/// Per-column layer normalisation over rows with affine gamma/beta (rows x 1).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-6);

enum class GrnMode {
  /// Channel norms pooled over all frames (ConvNeXt v2).
  global,
  /// Per-frame magnitudes; causal and stateless.
  per_frame,
};

/// Global response normalisation: gamma * (x * n(x)) + beta + x where
/// n(x) = G(x) / (mean over channels of G(x) + eps).
Var grn(const Var& x, const Var& gamma, const Var& beta, GrnMode mode, Real eps = 1e-6);

/// Columns of `table` (rows = entries) selected by `indices`, returned as
/// (dim x count). Gradient scatters back into the selected rows.
Var gather_rows(const Var& table, std::span<const int> indices);

/// Value of `quantized`, gradient passed straight to `input`.
Var straight_through(const Var& input, const Matrix& quantized);

}  // namespace apcodec::nn
