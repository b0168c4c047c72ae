#include "apcodec/nn/signal.hpp"

#include <complex>
#include <vector>

#include "apcodec/nn/ops.hpp"

namespace apcodec::nn {

namespace {

using Complex = std::complex<Real>;

}  // namespace

Var stft(const Var& waveform, const StftConfig& cfg) {
  if (waveform.rows() != 1) throw ValidationError("stft: waveform must be a single row");
  const Eigen::Map<const Vector> x(waveform.value().data(), waveform.cols());
  const ComplexSpectrum<Real> spec = stft_complex<Real>(x, cfg);
  const Index bins = cfg.bins();
  Matrix value(2 * bins, spec.frames());
  value.topRows(bins) = spec.real;
  value.bottomRows(bins) = spec.imag;

  return make_op(
      std::move(value), {waveform},
      [cfg](Node& s) {
        const Index bins = cfg.bins();
        const Index frames = s.grad.cols();
        const Index samples = s.inputs[0]->value.cols();
        const int n = cfg.fft_size();
        const Vector w = hann_window<Real>(cfg.frame_length());
        RealFft<Real> fft(n);
        std::vector<Complex> spectrum(bins);
        Vector buffer(n);
        Vector padded_grad =
            Vector::Zero(samples + cfg.left_padding() + cfg.right_padding());
        for (Index f = 0; f < frames; ++f) {
          // Sum_k gRe_k cos(2 pi k m / n) - gIm_k sin(...) equals n * irfft with
          // the interior bins halved.
          for (Index k = 0; k < bins; ++k) {
            const Real scale = (k == 0 || k == bins - 1) ? 1.0 : 0.5;
            spectrum[k] = Complex(s.grad(k, f), s.grad(bins + k, f)) * scale;
          }
          fft.inverse(spectrum.data(), buffer.data());
          padded_grad.segment(f * cfg.frame_shift(), cfg.frame_length()) +=
              Real(n) * buffer.head(cfg.frame_length()).cwiseProduct(w);
        }
        const Vector g = detail::pad_signal_adjoint<Real>(padded_grad, samples, cfg);
        s.inputs[0]->accumulate(g.transpose());
      },
      "stft");
}

Var istft(const Var& spectrum, const StftConfig& cfg) {
  const Index bins = cfg.bins();
  if (spectrum.rows() != 2 * bins)
    throw ValidationError("istft: expected " + std::to_string(2 * bins) + " rows (real over imaginary)");
  ComplexSpectrum<Real> spec{spectrum.value().topRows(bins), spectrum.value().bottomRows(bins), cfg};
  Matrix value = istft<Real>(spec).transpose();

  return make_op(
      std::move(value), {spectrum},
      [cfg](Node& s) {
        const Index bins = cfg.bins();
        const Index samples = s.grad.cols();
        const Index frames = samples / cfg.frame_shift();
        const int n = cfg.fft_size();
        const Vector w = hann_window<Real>(cfg.frame_length());
        const Vector norm = detail::synthesis_norm<Real>(frames, cfg);
        Vector acc_grad = Vector::Zero(norm.size());
        for (Index t = 0; t < samples; ++t) {
          const Index p = t + cfg.left_padding();
          acc_grad[p] = s.grad(0, t) / detail::checked_norm(norm[p], cfg);
        }
        RealFft<Real> fft(n);
        std::vector<Complex> out(bins);
        Vector buffer = Vector::Zero(n);
        Matrix g(2 * bins, frames);
        for (Index f = 0; f < frames; ++f) {
          buffer.head(cfg.frame_length()) =
              acc_grad.segment(f * cfg.frame_shift(), cfg.frame_length()).cwiseProduct(w);
          fft.forward(buffer.data(), out.data());
          for (Index k = 0; k < bins; ++k) {
            const bool edge = k == 0 || k == bins - 1;
            const Real scale = (edge ? 1.0 : 2.0) / n;
            g(k, f) = scale * out[k].real();
            g(bins + k, f) = edge ? 0.0 : scale * out[k].imag();
          }
        }
        s.inputs[0]->accumulate(g);
      },
      "istft");
}

Var magnitude(const Var& re, const Var& im) { return sqrt(add_scalar(square(re) + square(im), 1e-12)); }

}  // namespace apcodec::nn
