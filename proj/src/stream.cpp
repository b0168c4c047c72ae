#include "apcodec/stream.hpp"

#include <cmath>

namespace apcodec {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const CodecModel& require_causal(const CodecModel& model) {
  if (!model.config().causal) throw ModeError("streaming needs a causal model");
  return model;
}

Index overlap(const CodecConfig& c) { return c.stft.frame_length() - c.stft.frame_shift(); }

MatrixXd hstack(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(b.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

StreamEncoder::StreamEncoder(const CodecModel& model) : model_(&require_causal(model)) { reset(); }

void StreamEncoder::reset() {
  history_ = VectorXd::Zero(overlap(model_->config()));
  pending_.clear();
  previous_ = {};
  frames_ = 0;
}

MatrixXd StreamEncoder::push(std::span<const double> samples) {
  const CodecConfig& c = model_->config();
  const Index hop = c.hop();
  const StftConfig cfg = c.analysis();
  const bool reach_back = c.conv_kernel > c.downsample;
  std::vector<VectorXd> codes;

  for (double s : samples) {
    if (!std::isfinite(s)) throw ValidationError("stream input contains non-finite samples");
    pending_.push_back(s);
    if (Index(pending_.size()) < hop) continue;

    VectorXd padded(history_.size() + hop);
    padded << history_, Eigen::Map<const VectorXd>(pending_.data(), hop);
    SpectralFrames<double> block = amp_phase_from_complex(stft_from_padded(padded, c.downsample, cfg));
    history_ = padded.tail(history_.size());
    pending_.clear();

    SpectralFrames<double> input = block;
    if (reach_back && frames_ > 0) {
      input.log_amplitude = hstack(previous_.log_amplitude, block.log_amplitude);
      input.phase = hstack(previous_.phase, block.phase);
    }
    const LatentCode code = model_->encode(input);
    codes.push_back(code.values.rightCols(1));
    if (reach_back) previous_ = std::move(block);
    ++frames_;
  }

  MatrixXd out(c.code_dim, Index(codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) out.col(Index(i)) = codes[i];
  return out;
}

// ---------------------------------------------------------------------------

StreamDecoder::StreamDecoder(const CodecModel& model) : model_(&require_causal(model)) { reset(); }

void StreamDecoder::reset() {
  const CodecConfig& c = model_->config();
  context_.resize(c.code_dim, 0);
  acc_ = VectorXd::Zero(c.hop() + overlap(c));
  norm_ = VectorXd::Zero(acc_.size());
  frames_ = 0;
}

VectorXd StreamDecoder::push_tokens(const TokenMatrix& tokens) {
  return push_code(model_->quantizer().dequantize(tokens));
}

VectorXd StreamDecoder::push_code(const MatrixXd& code) {
  const CodecConfig& c = model_->config();
  if (code.rows() != c.code_dim)
    throw ValidationError("code has " + std::to_string(code.rows()) + " dims, decoder expects " +
                          std::to_string(c.code_dim));
  const StftConfig cfg = c.analysis();
  const Index hop = c.hop(), shift = cfg.frame_shift(), length = cfg.frame_length();
  const Index pad = overlap(c);
  // Code frames the causal upsampler mixes into one output hop.
  const Index reach = (c.deconv_kernel + c.downsample - 1) / c.downsample - 1;
  const VectorXd window = hann_window<double>(length);
  RealFft<double> fft(cfg.fft_size());
  std::vector<std::complex<double>> spectrum(cfg.bins());
  VectorXd frame(cfg.fft_size());

  VectorXd out(hop * code.cols());
  for (Index j = 0; j < code.cols(); ++j) {
    const MatrixXd input = hstack(context_, code.col(j));
    const SpectralFrames<double> decoded = model_->decode(LatentCode{input, c.code_rate()});
    SpectralFrames<double> block{decoded.log_amplitude.rightCols(c.downsample),
                                 decoded.phase.rightCols(c.downsample), cfg};
    const ComplexSpectrum<double> spec = complex_from_amp_phase(block);
    for (Index f = 0; f < c.downsample; ++f) {
      for (int k = 0; k < cfg.bins(); ++k) spectrum[k] = {spec.real(k, f), spec.imag(k, f)};
      fft.inverse(spectrum.data(), frame.data());
      acc_.segment(f * shift, length) += frame.head(length).cwiseProduct(window);
      norm_.segment(f * shift, length) += window.cwiseAbs2();
    }
    // Positions [0, hop) of the buffer can no longer receive contributions.
    for (Index p = 0; p < hop; ++p) {
      const Index absolute = frames_ * hop + p;
      out[j * hop + p] = absolute < pad ? 0.0 : acc_[p] / detail::checked_norm(norm_[p], cfg);
    }
    acc_.head(pad) = acc_.segment(hop, pad).eval();
    acc_.tail(hop).setZero();
    norm_.head(pad) = norm_.segment(hop, pad).eval();
    norm_.tail(hop).setZero();

    context_ = input.rightCols(std::min<Index>(reach, input.cols()));
    ++frames_;
  }
  return out;
}

VectorXd StreamDecoder::flush() {
  const CodecConfig& c = model_->config();
  const StftConfig cfg = c.analysis();
  VectorXd out;
  if (frames_ > 0) {
    const Index pad = overlap(c);
    out.resize(pad);
    for (Index p = 0; p < pad; ++p) out[p] = acc_[p] / detail::checked_norm(norm_[p], cfg);
  }
  reset();
  return out;
}

// ---------------------------------------------------------------------------

StreamCodec::StreamCodec(const CodecModel& model, bool quantize)
    : model_(&model), quantize_(quantize), encoder_(model), decoder_(model) {
  reset();
}

void StreamCodec::reset() {
  encoder_.reset();
  decoder_.reset();
  tokens_.resize(quantize_ ? model_->config().stages : 0, 0);
}

Index StreamCodec::delay() const { return overlap(model_->config()); }

VectorXd StreamCodec::push(std::span<const double> samples) {
  const MatrixXd code = encoder_.push(samples);
  if (code.cols() == 0) return VectorXd();
  if (!quantize_) return decoder_.push_code(code);
  const RvqTrace<double> trace = model_->quantizer().quantize(code);
  TokenMatrix grown(tokens_.rows(), tokens_.cols() + trace.tokens.cols());
  grown << tokens_, trace.tokens;
  tokens_ = std::move(grown);
  return decoder_.push_code(trace.quantized);
}

VectorXd StreamCodec::flush() {
  VectorXd tail = decoder_.flush();
  encoder_.reset();
  return tail;
}

// ---------------------------------------------------------------------------

LatencyReport measure_latency(const CodecModel& model, const VectorXd& signal, Index stride, bool quantize) {
  if (stride < 1) throw ValidationError("probe stride must be positive");
  const Index hop = model.config().hop();
  LatencyReport report;

  // Baseline, one sample at a time, remembering when each output sample left.
  StreamCodec codec(model, quantize);
  std::vector<Index> emitted_at;
  VectorXd baseline(0);
  std::vector<double> collected;
  for (Index t = 0; t < signal.size(); ++t) {
    const VectorXd y = codec.push(std::span<const double>(signal.data() + t, 1));
    for (Index i = 0; i < y.size(); ++i) {
      collected.push_back(y[i]);
      emitted_at.push_back(t + 1);
    }
    if (y.size() > 0 && report.first_output_after == 0) report.first_output_after = t + 1;
  }
  const VectorXd tail = codec.flush();
  for (Index i = 0; i < tail.size(); ++i) {
    collected.push_back(tail[i]);
    emitted_at.push_back(signal.size());
  }
  baseline = Eigen::Map<VectorXd>(collected.data(), Index(collected.size()));

  for (Index t = 0; t < signal.size(); t += stride) {
    VectorXd probe = signal;
    probe[t] += 1.0;
    StreamCodec run(model, quantize);
    VectorXd head = run.push(std::span<const double>(probe.data(), probe.size()));
    VectorXd rest = run.flush();
    VectorXd y(head.size() + rest.size());
    y << head, rest;
    ++report.probes;
    Index first = -1;
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != baseline[i]) {
        first = i;
        break;
      }
    if (first < 0) {
      ++report.silent_probes;
      continue;
    }
    if (first < t / hop * hop) ++report.violations;
    report.probe_latency = std::max(report.probe_latency, emitted_at[first] - t);
  }
  return report;
}

}  // namespace apcodec
