#pragma once

// Short-time Fourier analysis/synthesis, the parallel phase estimator and the
// mel front end. Every function here is pure and templated on the scalar type.
//
// Layout convention used across the project: spectral matrices are
// (bins x frames), i.e. one column per STFT frame.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <type_traits>
#include <vector>

#include "apcodec/error.hpp"

namespace apcodec {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Lower clamp on linear amplitudes before taking logarithms.
inline constexpr double kAmplitudeFloor = 1e-5;
/// Upper bound on exp(log-amplitude) during synthesis.
inline constexpr double kMaxLinearAmplitude = 1e8;

enum class Window { hann };

/// How frames are aligned to the waveform.
///
/// `centered` reflect-pads (w_l - w_s)/2 samples at both ends. `causal`
/// zero-pads w_l - w_s samples on the left only, so frame f ends at sample
/// (f + 1) * w_s and never looks ahead. Both give exactly T / w_s frames.
enum class Framing { centered, causal };

class StftConfig {
 public:
  StftConfig() : StftConfig(320, 40, 1024, 48000) {}

  StftConfig(int frame_length, int frame_shift, int fft_size, int sample_rate,
             Framing framing = Framing::centered, Window window = Window::hann)
      : frame_length_(frame_length),
        frame_shift_(frame_shift),
        fft_size_(fft_size),
        sample_rate_(sample_rate),
        framing_(framing),
        window_(window) {
    validate();
  }

  int frame_length() const { return frame_length_; }
  int frame_shift() const { return frame_shift_; }
  int fft_size() const { return fft_size_; }
  int sample_rate() const { return sample_rate_; }
  Framing framing() const { return framing_; }
  Window window() const { return window_; }

  /// Number of frequency bins, fft_size / 2 + 1.
  int bins() const { return fft_size_ / 2 + 1; }
  double frame_rate() const { return double(sample_rate_) / frame_shift_; }

  int left_padding() const {
    const int overlap = frame_length_ - frame_shift_;
    return framing_ == Framing::centered ? overlap / 2 : overlap;
  }
  int right_padding() const {
    const int overlap = frame_length_ - frame_shift_;
    return framing_ == Framing::centered ? overlap / 2 : 0;
  }

  StftConfig with_framing(Framing framing) const {
    return StftConfig(frame_length_, frame_shift_, fft_size_, sample_rate_, framing, window_);
  }
  StftConfig with_sample_rate(int sample_rate) const {
    return StftConfig(frame_length_, frame_shift_, fft_size_, sample_rate, framing_, window_);
  }

  bool operator==(const StftConfig&) const = default;

 private:
  void validate() const {
    if (frame_shift_ < 1 || frame_length_ < frame_shift_ || fft_size_ < frame_length_)
      throw ConfigError("STFT requires 1 <= frame_shift <= frame_length <= fft_size");
    if (fft_size_ < 4 || (fft_size_ & (fft_size_ - 1)) != 0)
      throw ConfigError("fft_size must be a power of two >= 4");
    if (sample_rate_ < 1) throw ConfigError("sample_rate must be positive");
    if ((frame_length_ - frame_shift_) % 2 != 0)
      throw ConfigError("frame_length - frame_shift must be even for centered framing");
    // Constant-overlap-add of the analysis window at this hop.
    std::vector<double> sum(frame_shift_, 0.0);
    for (int n = 0; n < frame_length_; ++n)
      sum[n % frame_shift_] += 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / frame_length_);
    const auto [lo, hi] = std::minmax_element(sum.begin(), sum.end());
    if (*lo <= 0.0 || (*hi - *lo) > 1e-9 * *hi)
      throw ConfigError("Hann window does not satisfy COLA at the requested frame shift");
  }

  int frame_length_;
  int frame_shift_;
  int fft_size_;
  int sample_rate_;
  Framing framing_;
  Window window_;
};

/// Log-amplitude and phase spectra, both (bins x frames).
template <typename Scalar>
struct SpectralFrames {
  Mat<Scalar> log_amplitude;
  Mat<Scalar> phase;
  StftConfig config;

  Eigen::Index frames() const { return log_amplitude.cols(); }
  Eigen::Index bins() const { return log_amplitude.rows(); }
};

/// Real and imaginary parts of a short-time spectrum, both (bins x frames).
template <typename Scalar>
struct ComplexSpectrum {
  Mat<Scalar> real;
  Mat<Scalar> imag;
  StftConfig config;

  Eigen::Index frames() const { return real.cols(); }
  Eigen::Index bins() const { return real.rows(); }
};

/// Periodic Hann window of the given length.
template <typename Scalar>
Vec<Scalar> hann_window(int length) {
  Vec<Scalar> w(length);
  for (int n = 0; n < length; ++n)
    w[n] = Scalar(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length));
  return w;
}

/// Real-input FFT of fixed power-of-two size with an n/2+1 bin half spectrum.
/// Not thread-safe (the backend keeps scratch buffers); use one per thread.
template <typename Scalar>
class RealFft {
 public:
  using Complex = std::complex<Scalar>;

  explicit RealFft(int n) : n_(n) { fft_.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum); }

  int size() const { return n_; }

  void forward(const Scalar* in, Complex* out) { fft_.fwd(out, in, n_); }

  /// Inverse of `forward` (scaled by 1/n); the imaginary parts of the DC and
  /// Nyquist bins are ignored.
  void inverse(const Complex* in, Scalar* out) {
    scratch_.assign(in, in + n_ / 2 + 1);
    scratch_.front().imag(0);
    scratch_.back().imag(0);
    fft_.inv(out, scratch_.data(), n_);
  }

 private:
  Eigen::FFT<Scalar> fft_;
  int n_;
  std::vector<Complex> scratch_;
};

/// Number of frames for a T-sample signal (T must be a multiple of the shift).
inline Eigen::Index frame_count(Eigen::Index samples, const StftConfig& cfg) {
  return samples / cfg.frame_shift();
}

namespace detail {

template <typename Scalar, typename Derived>
void check_waveform(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg) {
  if (x.size() == 0) throw EmptyInputError("waveform is empty");
  if (!x.allFinite()) throw ValidationError("waveform contains non-finite samples");
  if (x.size() < cfg.frame_length())
    throw ValidationError("waveform shorter than one analysis frame (" +
                          std::to_string(x.size()) + " < " + std::to_string(cfg.frame_length()) + ")");
  if (x.size() % cfg.frame_shift() != 0)
    throw FramingError("waveform length " + std::to_string(x.size()) +
                       " is not a multiple of the frame shift " + std::to_string(cfg.frame_shift()));
}

/// Source index in the unpadded signal for padded position p, or -1 for a zero sample.
inline Eigen::Index padded_source(Eigen::Index p, Eigen::Index samples, const StftConfig& cfg) {
  Eigen::Index i = p - cfg.left_padding();
  if (i >= 0 && i < samples) return i;
  if (cfg.framing() == Framing::causal) return -1;
  if (i < 0) return -i;                      // reflect, edge excluded
  return 2 * (samples - 1) - i;
}

template <typename Scalar, typename Derived>
Vec<Scalar> pad_signal(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg) {
  const Eigen::Index samples = x.size();
  Vec<Scalar> padded(samples + cfg.left_padding() + cfg.right_padding());
  for (Eigen::Index p = 0; p < padded.size(); ++p) {
    const Eigen::Index s = padded_source(p, samples, cfg);
    padded[p] = s < 0 ? Scalar(0) : Scalar(x(s));
  }
  return padded;
}

/// Adjoint of `pad_signal`: folds a padded-domain gradient back onto the signal.
template <typename Scalar>
Vec<Scalar> pad_signal_adjoint(const Vec<Scalar>& padded_grad, Eigen::Index samples,
                               const StftConfig& cfg) {
  Vec<Scalar> g = Vec<Scalar>::Zero(samples);
  for (Eigen::Index p = 0; p < padded_grad.size(); ++p) {
    const Eigen::Index s = padded_source(p, samples, cfg);
    if (s >= 0) g[s] += padded_grad[p];
  }
  return g;
}

/// Overlap-add normaliser sum_f w^2 in the padded domain, floored for the
/// causal tail where only the decaying edge of the last window is present.
template <typename Scalar>
Vec<Scalar> synthesis_norm(Eigen::Index frames, const StftConfig& cfg) {
  const Vec<Scalar> w = hann_window<Scalar>(cfg.frame_length());
  const Eigen::Index padded = frames * cfg.frame_shift() + cfg.frame_length() - cfg.frame_shift();
  Vec<Scalar> norm = Vec<Scalar>::Zero(padded);
  for (Eigen::Index f = 0; f < frames; ++f)
    norm.segment(f * cfg.frame_shift(), cfg.frame_length()) += w.cwiseAbs2();
  return norm;
}

/// Smallest normaliser value accepted inside the output region.
inline constexpr double kCausalNormFloor = 0.1;

template <typename Scalar>
Scalar checked_norm(Scalar value, const StftConfig& cfg) {
  if (cfg.framing() == Framing::causal) return std::max(value, Scalar(kCausalNormFloor));
  if (!(value > Scalar(1e-10)))
    throw ConfigError("overlap-add normaliser vanished (window/shift violate COLA)");
  return value;
}

}  // namespace detail

/// Analyses `frames` frames of an already padded signal; frame f starts at
/// padded[f * w_s]. Shared by the batch transform and block-wise streaming.
template <typename Scalar>
ComplexSpectrum<Scalar> stft_from_padded(const Vec<Scalar>& padded, Eigen::Index frames,
                                         const StftConfig& cfg) {
  if (frames < 0 || (frames > 0 && padded.size() < (frames - 1) * cfg.frame_shift() + cfg.frame_length()))
    throw ValidationError("stft_from_padded: buffer too short for the requested frames");
  const Vec<Scalar> w = hann_window<Scalar>(cfg.frame_length());
  const int bins = cfg.bins();

  ComplexSpectrum<Scalar> out{Mat<Scalar>(bins, frames), Mat<Scalar>(bins, frames), cfg};
  RealFft<Scalar> fft(cfg.fft_size());
  Vec<Scalar> buffer = Vec<Scalar>::Zero(cfg.fft_size());
  std::vector<std::complex<Scalar>> spectrum(bins);
  for (Eigen::Index f = 0; f < frames; ++f) {
    buffer.head(cfg.frame_length()) =
        padded.segment(f * cfg.frame_shift(), cfg.frame_length()).cwiseProduct(w);
    fft.forward(buffer.data(), spectrum.data());
    for (int k = 0; k < bins; ++k) {
      out.real(k, f) = spectrum[k].real();
      out.imag(k, f) = spectrum[k].imag();
    }
  }
  return out;
}

/// Complex STFT of a waveform. T must be >= w_l and a multiple of w_s; yields T / w_s frames.
template <typename Scalar, typename Derived>
ComplexSpectrum<Scalar> stft_complex(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg) {
  detail::check_waveform<Scalar>(x, cfg);
  return stft_from_padded<Scalar>(detail::pad_signal<Scalar>(x, cfg), frame_count(x.size(), cfg), cfg);
}

/// Element-wise phase from real and imaginary parts.
///
/// Phi(R, I) = arctan(I / R) - pi/2 * Sgn*(I) * (Sgn*(R) - 1), with
/// Sgn*(z) = 1 for z >= 0 and -1 otherwise, and Phi(0, 0) = 0.
/// The result lies in (-pi, pi]; R = 0 takes the limit +-pi/2.
template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar phase_from_parts(Scalar re, Scalar im) {
  if (re == Scalar(0) && im == Scalar(0)) return Scalar(0);
  const Scalar sgn_i = im >= Scalar(0) ? Scalar(1) : Scalar(-1);
  const Scalar sgn_r = re >= Scalar(0) ? Scalar(1) : Scalar(-1);
  const Scalar half_pi = Scalar(std::numbers::pi / 2);
  const Scalar base = re == Scalar(0) ? sgn_i * half_pi : std::atan(im / re);
  return base - half_pi * sgn_i * (sgn_r - Scalar(1));
}

template <typename DerivedR, typename DerivedI>
Mat<typename DerivedR::Scalar> phase_from_parts(const Eigen::MatrixBase<DerivedR>& re,
                                                 const Eigen::MatrixBase<DerivedI>& im) {
  using Scalar = typename DerivedR::Scalar;
  if (re.rows() != im.rows() || re.cols() != im.cols())
    throw ValidationError("phase_from_parts: real and imaginary shapes differ");
  Mat<Scalar> out(re.rows(), re.cols());
  for (Eigen::Index j = 0; j < re.cols(); ++j)
    for (Eigen::Index i = 0; i < re.rows(); ++i)
      out(i, j) = phase_from_parts<Scalar>(re(i, j), im(i, j));
  return out;
}

/// Log-amplitude ln(max(|S|, floor)) and principal-value phase of a complex
/// spectrum. The floor is a clamp, so exp() inverts it exactly above the floor.
template <typename Scalar>
SpectralFrames<Scalar> amp_phase_from_complex(const ComplexSpectrum<Scalar>& spec) {
  SpectralFrames<Scalar> out;
  out.config = spec.config;
  out.log_amplitude = (spec.real.cwiseAbs2() + spec.imag.cwiseAbs2())
                          .cwiseSqrt()
                          .cwiseMax(Scalar(kAmplitudeFloor))
                          .array()
                          .log()
                          .matrix();
  out.phase = phase_from_parts(spec.real, spec.imag);
  return out;
}

/// Amplitude and phase spectra of a waveform.
template <typename Scalar, typename Derived>
SpectralFrames<Scalar> stft(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg) {
  return amp_phase_from_complex(stft_complex<Scalar>(x, cfg));
}

/// Re = exp(A) cos P, Im = exp(A) sin P, with exp(A) clamped to kMaxLinearAmplitude.
/// `clamped`, when given, receives the number of clamped entries.
template <typename Scalar>
ComplexSpectrum<Scalar> complex_from_amp_phase(const SpectralFrames<Scalar>& frames,
                                               std::size_t* clamped = nullptr) {
  if (frames.log_amplitude.rows() != frames.phase.rows() ||
      frames.log_amplitude.cols() != frames.phase.cols())
    throw ValidationError("complex_from_amp_phase: amplitude and phase shapes differ");
  const Scalar cap = Scalar(kMaxLinearAmplitude);
  std::size_t count = 0;
  Mat<Scalar> mag(frames.log_amplitude.rows(), frames.log_amplitude.cols());
  for (Eigen::Index i = 0; i < mag.size(); ++i) {
    const Scalar m = std::exp(frames.log_amplitude(i));
    if (!(m <= cap)) {
      mag(i) = cap;
      ++count;
    } else {
      mag(i) = m;
    }
  }
  if (clamped) *clamped = count;
  ComplexSpectrum<Scalar> out;
  out.config = frames.config;
  out.real = mag.cwiseProduct(frames.phase.array().cos().matrix());
  out.imag = mag.cwiseProduct(frames.phase.array().sin().matrix());
  return out;
}

/// Weighted overlap-add inverse STFT. Output has frames * w_s samples.
template <typename Scalar>
Vec<Scalar> istft(const ComplexSpectrum<Scalar>& spec) {
  const StftConfig& cfg = spec.config;
  if (spec.real.rows() != cfg.bins() || spec.imag.rows() != cfg.bins() ||
      spec.real.cols() != spec.imag.cols())
    throw ValidationError("istft: spectrum shape does not match the STFT configuration");
  if (!spec.real.allFinite() || !spec.imag.allFinite())
    throw ValidationError("istft: spectrum contains non-finite values");
  const Eigen::Index frames = spec.frames();
  const Eigen::Index samples = frames * cfg.frame_shift();
  if (frames == 0) return Vec<Scalar>();

  const Vec<Scalar> w = hann_window<Scalar>(cfg.frame_length());
  const Vec<Scalar> norm = detail::synthesis_norm<Scalar>(frames, cfg);
  Vec<Scalar> acc = Vec<Scalar>::Zero(norm.size());
  RealFft<Scalar> fft(cfg.fft_size());
  std::vector<std::complex<Scalar>> spectrum(cfg.bins());
  Vec<Scalar> buffer(cfg.fft_size());
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int k = 0; k < cfg.bins(); ++k) spectrum[k] = {spec.real(k, f), spec.imag(k, f)};
    fft.inverse(spectrum.data(), buffer.data());
    acc.segment(f * cfg.frame_shift(), cfg.frame_length()) +=
        buffer.head(cfg.frame_length()).cwiseProduct(w);
  }
  Vec<Scalar> out(samples);
  for (Eigen::Index t = 0; t < samples; ++t) {
    const Eigen::Index p = t + cfg.left_padding();
    out[t] = acc[p] / detail::checked_norm(norm[p], cfg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel front end (HTK-style triangular filters spanning 0 .. f_s / 2).

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filter weight of band `band` (0-based) at frequency `hz`.
inline double mel_band_weight(int band, double hz, int n_mel, int sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  const double step = top / (n_mel + 1);
  const double lo = mel_to_hz(step * band);
  const double mid = mel_to_hz(step * (band + 1));
  const double hi = mel_to_hz(step * (band + 2));
  if (hz <= lo || hz >= hi) return 0.0;
  return hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
}

/// (n_mel x bins) filterbank matrix.
template <typename Scalar>
Mat<Scalar> mel_filterbank(int n_mel, const StftConfig& cfg) {
  if (n_mel < 1) throw ConfigError("n_mel must be >= 1");
  if (n_mel > cfg.bins()) throw ConfigError("n_mel exceeds the number of frequency bins");
  Mat<Scalar> fb = Mat<Scalar>::Zero(n_mel, cfg.bins());
  for (int b = 0; b < n_mel; ++b)
    for (int k = 0; k < cfg.bins(); ++k)
      fb(b, k) = Scalar(mel_band_weight(b, double(k) * cfg.sample_rate() / cfg.fft_size(), n_mel,
                                        cfg.sample_rate()));
  for (int b = 0; b < n_mel; ++b)
    if (!(fb.row(b).sum() > Scalar(0)))
      throw ConfigError("mel band " + std::to_string(b) + " covers no FFT bin; reduce n_mel");
  return fb;
}

/// Log mel spectrogram ln(max(fb * |S|, floor)), shape (n_mel x frames).
template <typename Scalar, typename Derived>
Mat<Scalar> mel_spectrogram(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg, int n_mel) {
  const Mat<Scalar> fb = mel_filterbank<Scalar>(n_mel, cfg);
  const ComplexSpectrum<Scalar> spec = stft_complex<Scalar>(x, cfg);
  const Mat<Scalar> mag = (spec.real.cwiseAbs2() + spec.imag.cwiseAbs2()).cwiseSqrt();
  return (fb * mag).cwiseMax(Scalar(kAmplitudeFloor)).array().log().matrix();
}

}  // namespace apcodec
