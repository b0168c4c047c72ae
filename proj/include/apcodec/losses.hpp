#pragma once

// Training objectives. Spectral inputs are (bins x frames), waveforms (1 x T).

#include <span>
#include <vector>

#include "apcodec/discriminator.hpp"
#include "apcodec/dsp.hpp"
#include "apcodec/nn/layers.hpp"

namespace apcodec {

struct LossWeights {
  double phase = 20.0 / 9.0;
  double real_imag = 2.25;
  double complex = 4.0 / 9.0;
  double mel = 1.0;
  double spectral = 45.0;
  double quantization = 7.5;
  double resolution = 0.1;  // multi-resolution discriminator terms
  double distillation = 1.0;

  /// Throws ConfigError on negative or non-finite weights.
  void validate() const;
};

/// |x - 2 pi round(x / 2 pi)|, in [0, pi].
double anti_wrap(double x);

nn::Var amplitude_loss(const nn::Var& predicted, const nn::Var& target);

struct PhaseLosses {
  nn::Var instantaneous;      // anti-wrapped phase error
  nn::Var group_delay;        // anti-wrapped error of frequency differences
  nn::Var angular_frequency;  // anti-wrapped error of time differences
  nn::Var total;
};
/// Each term is a mean over its own elements.
PhaseLosses phase_loss(const nn::Var& predicted, const nn::Var& target);

struct ComplexLosses {
  nn::Var real_imag;    // (|dRe|_1 + |dIm|_1) / (F N)
  nn::Var consistency;  // (|S - STFT(ISTFT(S))|_F^2 over both parts) / (F N)
  nn::Var total;        // real_imag_weight * real_imag + consistency
};
ComplexLosses complex_spectrum_loss(const nn::Var& real, const nn::Var& imag, const nn::Var& target_real,
                                    const nn::Var& target_imag, const StftConfig& cfg, double real_imag_weight);

/// Spectrum Re = exp(A) cos P, Im = exp(A) sin P with the amplitude clamped
/// at kMaxLinearAmplitude.
std::pair<nn::Var, nn::Var> complex_from_amp_phase(const nn::Var& log_amplitude, const nn::Var& phase);

/// ln(max(filterbank * |STFT(x)|, kAmplitudeFloor)), (n_mel x frames).
nn::Var log_mel(const nn::Var& waveform, const StftConfig& cfg, const nn::Matrix& filterbank);
/// MAE + MSE between log mel spectrograms.
nn::Var mel_loss(const nn::Var& predicted, const nn::Var& target, const StftConfig& cfg,
                 const nn::Matrix& filterbank);

struct SpectralTerms {
  nn::Var amplitude;
  nn::Var phase;
  nn::Var complex;
  nn::Var mel;
};
/// amplitude + w_P phase + w_S complex + w_M mel.
nn::Var spectral_level_loss(const SpectralTerms& terms, const LossWeights& weights);

/// mean(max(0, 1 - D(fake))).
nn::Var generator_adversarial(const nn::Var& fake_score);
/// mean(max(0, 1 - D(real))) + mean(max(0, 1 + D(fake))).
nn::Var discriminator_adversarial(const nn::Var& real_score, const nn::Var& fake_score);
/// Sum over layers of the per-layer MAE.
nn::Var feature_matching(std::span<const nn::Var> real, std::span<const nn::Var> fake);

/// Sum over period sub-discriminators of (adversarial + feature matching),
/// plus `resolution_weight` times the same over resolution sub-discriminators.
/// Real-side features should come from a detached pass.
nn::Var generator_gan_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                           double resolution_weight);
nn::Var discriminator_gan_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                               double resolution_weight);

/// Mean over taps of MSE(student, teacher); teacher values are treated as
/// constants. Throws ConfigError when the lists do not align.
nn::Var kd_loss(const nn::TapList& teacher, const nn::TapList& student);

}  // namespace apcodec
