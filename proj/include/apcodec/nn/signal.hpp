#pragma once

// Differentiable STFT/ISTFT. Waveforms are (1 x T) rows; spectra are stacked
// as (2 * bins x frames) with the real part in the top half.

#include "apcodec/dsp.hpp"
#include "apcodec/nn/ops.hpp"

namespace apcodec::nn {

Var stft(const Var& waveform, const StftConfig& cfg);
Var istft(const Var& spectrum, const StftConfig& cfg);

inline Var real_part(const Var& spectrum) { return slice_rows(spectrum, 0, spectrum.rows() / 2); }
inline Var imag_part(const Var& spectrum) {
  return slice_rows(spectrum, spectrum.rows() / 2, spectrum.rows() / 2);
}

/// sqrt(re^2 + im^2 + 1e-12); the offset keeps the gradient finite at zero.
Var magnitude(const Var& re, const Var& im);

}  // namespace apcodec::nn
