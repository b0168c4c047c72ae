// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "apcodec/bitstream.hpp"
#include "apcodec/codec.hpp"
#include "apcodec/eval.hpp"
#include "apcodec/losses.hpp"
#include "apcodec/nn/signal.hpp"
#include "apcodec/stream.hpp"
#include "apcodec/trainer.hpp"
#include "gradcheck.hpp"

using namespace apcodec;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nn::Var;

namespace {

constexpr double kPi = std::numbers::pi;

// Pinned tolerances and budgets.
constexpr double kBitrateBudgetSeconds = 1e-3;
constexpr Index kExpectedLatency = 320;
constexpr double kStreamTolerance = 1e-5;
constexpr int kChunkings = 50;
constexpr double kStreamBudgetSeconds = 60;
constexpr double kRoundTripTolerance = 1e-6;
constexpr int kRoundTripSignals = 100;
constexpr double kPhaseTolerance = 1e-12;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientBudgetSeconds = 300;
constexpr int kRvqInstances = 1000;
constexpr double kTelescopeTolerance = 1e-12;
constexpr long kFuzzFrames = 100000;
constexpr double kFixedPointTolerance = 1e-10;
constexpr double kPeriodicityTolerance = 1e-10;
constexpr int kOverfitSteps = 500;
constexpr int kMovingWindow = 10;
constexpr double kRequiredReduction = 0.5;
constexpr double kOverfitBudgetSeconds = 15 * 60;
constexpr int kDistillSteps = 200;
constexpr int kTeacherSteps = 100;
constexpr double kDistillBudgetSeconds = 10 * 60;
constexpr double kIdenticalMetricTolerance = 1e-9;
constexpr double kNoisePhaseCentre = 1.80;
constexpr double kNoisePhaseHalfWidth = 0.15;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Detail {
 public:
  template <typename T>
  Detail& operator<<(const T& v) {
    out_ << v;
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

VectorXd gaussian_noise(Index n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = d(rng);
  return x;
}

// A few partials with a slow tremolo and a little noise.
VectorXd harmonic_clip(int sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  VectorXd x(sample_rate);
  for (Index t = 0; t < x.size(); ++t) {
    const double s = double(t) / sample_rate;
    x[t] = 0.3 * std::sin(2 * kPi * 220 * s) + 0.15 * std::sin(2 * kPi * 440 * s + 0.5) +
           0.1 * std::sin(2 * kPi * 1330 * s) * (0.5 + 0.5 * std::sin(2 * kPi * 3 * s)) + 0.01 * n01(rng);
  }
  return x;
}

CodecConfig tiny_causal() {
  CodecConfig c = CodecConfig::tiny();
  c.causal = true;
  return c;
}

// ---------------------------------------------------------------------------

Outcome bitrate() {
  struct Case {
    int sample_rate;
    int stages;
    double kbps;
  };
  const Case cases[] = {{48000, 8, 12}, {48000, 4, 6}, {24000, 8, 6}, {24000, 4, 3}, {16000, 8, 4}, {16000, 4, 2}};
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  for (const Case& c : cases) {
    const CodecConfig cfg = CodecConfig::reference(c.sample_rate, c.stages);
    // Integer cross-check: frames per second times bits per frame.
    const long hop = long(cfg.stft.frame_shift()) * cfg.downsample;
    long index_bits = 0;
    while ((1L << index_bits) < cfg.codebook_size) ++index_bits;
    const bool exact_rate = c.sample_rate % hop == 0;
    const long bits_per_second = c.sample_rate / hop * cfg.stages * index_bits;
    if (cfg.bitrate_kbps() != c.kbps || !exact_rate || bits_per_second != long(c.kbps * 1000)) {
      o.pass = false;
      o.detail += std::to_string(c.sample_rate) + "/" + std::to_string(c.stages) + " gave " +
                  std::to_string(cfg.bitrate_kbps()) + "; ";
    }
  }
  const double elapsed = seconds_since(start);
  if (elapsed >= kBitrateBudgetSeconds) o.pass = false;
  o.detail += (Detail() << "6 configurations, " << elapsed * 1e6 << " us").str();
  return o;
}

Outcome latency() {
  CodecConfig cfg = CodecConfig::reference(48000, 4);
  cfg.causal = true;
  const CodecModel model(cfg, 1);
  std::mt19937_64 rng(2);
  const VectorXd signal = gaussian_noise(3 * cfg.hop(), rng, 0.3);
  const LatencyReport r = measure_latency(model, signal, 7);
  const Index nominal = Index(cfg.stft.frame_shift()) * cfg.downsample;
  Outcome o;
  o.pass = nominal == kExpectedLatency && r.probe_latency == kExpectedLatency &&
           r.first_output_after == kExpectedLatency && r.violations == 0 && r.silent_probes == 0;
  o.detail = (Detail() << "probe " << r.probe_latency << " samples over " << r.probes << " perturbations ("
                       << 1000.0 * double(r.probe_latency) / cfg.stft.sample_rate() << " ms at 48 kHz), first output after "
                       << r.first_output_after << ", violations " << r.violations)
                 .str();
  return o;
}

Outcome streaming() {
  const auto start = std::chrono::steady_clock::now();
  const CodecModel model(tiny_causal(), 3);
  std::mt19937_64 rng(4);
  const VectorXd x = gaussian_noise(16000, rng, 0.3);
  const VectorXd batch = model.resynthesize(x, true);

  double worst = 0;
  bool shapes_ok = true;
  for (int trial = 0; trial < kChunkings; ++trial) {
    // Fixed sizes 1 and 4096 first, then random sizes drawn per push.
    const Index fixed = trial == 0 ? 1 : trial == 1 ? 4096 : 0;
    std::uniform_int_distribution<Index> size(1, trial % 2 ? 64 : 3000);
    StreamCodec codec(model);
    std::vector<double> y;
    Index pos = 0;
    while (pos < x.size()) {
      const Index n = std::min(fixed ? fixed : size(rng), x.size() - pos);
      const VectorXd out = codec.push(std::span<const double>(x.data() + pos, n));
      y.insert(y.end(), out.data(), out.data() + out.size());
      pos += n;
    }
    const VectorXd tail = codec.flush();
    y.insert(y.end(), tail.data(), tail.data() + tail.size());
    if (Index(y.size()) != x.size() + codec.delay()) {
      shapes_ok = false;
      continue;
    }
    const VectorXd stream = Eigen::Map<VectorXd>(y.data(), Index(y.size()));
    worst = std::max(worst, stream.head(codec.delay()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (stream.tail(x.size()) - batch).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = shapes_ok && worst < kStreamTolerance && elapsed < kStreamBudgetSeconds;
  o.detail = (Detail() << kChunkings << " chunkings, max abs error " << worst << ", " << elapsed << " s").str();
  return o;
}

Outcome stft_round_trip() {
  const StftConfig cfg(320, 40, 1024, 48000);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0, worst_polar = 0;
  for (int s = 0; s < kRoundTripSignals; ++s) {
    VectorXd x(cfg.sample_rate());
    for (Index i = 0; i < x.size(); ++i) x[i] = u(rng);
    const ComplexSpectrum<double> spec = stft_complex<double>(x, cfg);
    worst = std::max(worst, (istft(spec) - x).cwiseAbs().maxCoeff());
    // Through log-amplitude and phase, the representation the model sees.
    const VectorXd polar = istft(complex_from_amp_phase(amp_phase_from_complex(spec)));
    worst_polar = std::max(worst_polar, (polar - x).cwiseAbs().maxCoeff());
  }
  Outcome o;
  o.pass = worst < kRoundTripTolerance && worst_polar < kRoundTripTolerance;
  o.detail = (Detail() << kRoundTripSignals << " signals, max abs error " << worst << " (complex), " << worst_polar
                       << " (log-amplitude/phase)")
                 .str();
  return o;
}

Outcome phase_formula() {
  std::vector<double> axis;
  for (int k = -49; k <= 50; ++k) axis.push_back(0.1 * k);  // contains 0
  MatrixXd re(axis.size(), axis.size()), im(axis.size(), axis.size());
  for (std::size_t i = 0; i < axis.size(); ++i)
    for (std::size_t j = 0; j < axis.size(); ++j) {
      re(i, j) = axis[i];
      im(i, j) = axis[j];
    }
  const MatrixXd graph = nn::phase(nn::constant(re), nn::constant(im)).value();
  double worst = 0;
  for (Index i = 0; i < re.size(); ++i) {
    const double expected = (re(i) == 0 && im(i) == 0) ? 0.0 : std::atan2(im(i), re(i));
    worst = std::max(worst, std::abs(phase_from_parts(re(i), im(i)) - expected));
    worst = std::max(worst, std::abs(graph(i) - expected));
  }
  const bool origin = phase_from_parts(0.0, 0.0) == 0.0;
  const bool negative_axis = phase_from_parts(-1.0, 0.0) == kPi;
  Outcome o;
  o.pass = worst <= kPhaseTolerance && origin && negative_axis;
  o.detail = (Detail() << re.size() << " grid points, max deviation " << worst << ", (0,0) -> "
                       << phase_from_parts(0.0, 0.0))
                 .str();
  return o;
}

// ---------------------------------------------------------------------------

struct GradientSuite {
  std::mt19937_64 rng{6};
  double worst = 0;
  std::string worst_name;
  int checks = 0;
  std::vector<std::string> failures;

  Index draw(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }
  Var leaf(Index rows, Index cols, double scale = 1.0) {
    return nn::parameter(gradcheck::random_matrix(rows, cols, rng, scale));
  }
  MatrixXd values(Index rows, Index cols, double scale = 1.0) {
    return gradcheck::random_matrix(rows, cols, rng, scale);
  }
  // Every parameter of `store`, lifted off zero so biases and norms are exercised.
  void add_store(nn::ParameterStore& store, std::vector<Var>& leaves, std::vector<std::string>& labels,
                 double scale = 0.3) {
    for (const auto& e : store.entries()) {
      Var v = e.var;
      v.mutable_value() += gradcheck::random_matrix(v.rows(), v.cols(), rng, scale);
      leaves.push_back(v);
      labels.push_back(e.name);
    }
  }

  void check(const std::string& name, const std::function<Var()>& f, std::vector<Var> leaves,
             std::vector<std::string> labels = {}) {
    const auto r = gradcheck::check(f, std::move(leaves), std::move(labels), rng());
    ++checks;
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = name + " / " + r.where;
    }
    if (!(r.worst < kGradientTolerance)) failures.push_back(name + " / " + r.where);
  }
};

void elementwise_ops(GradientSuite& g) {
  const Index rows = g.draw(2, 5), cols = g.draw(3, 7);
  Var a = g.leaf(rows, cols), b = g.leaf(rows, cols), bias = g.leaf(rows, 1);
  Var pos = nn::parameter(g.values(rows, cols).cwiseAbs().array() + 0.5);
  g.check("add", [&] { return a + b; }, {a, b});
  g.check("subtract", [&] { return a - b; }, {a, b});
  g.check("multiply", [&] { return a * b; }, {a, b});
  g.check("scale", [&] { return -a * 3.0; }, {a});
  g.check("add_scalar", [&] { return nn::add_scalar(a, 2.0); }, {a});
  g.check("add_bias", [&] { return nn::add_bias(a, bias); }, {a, bias});
  g.check("scale_rows", [&] { return nn::scale_rows(a, bias); }, {a, bias});
  g.check("exp", [&] { return nn::exp(a, 1e8); }, {a});
  g.check("log", [&] { return nn::log(pos); }, {pos});
  g.check("sqrt", [&] { return nn::sqrt(pos); }, {pos});
  g.check("square", [&] { return nn::square(a); }, {a});
  g.check("abs", [&] { return nn::abs(a); }, {a});
  g.check("sin", [&] { return nn::sin(a); }, {a});
  g.check("cos", [&] { return nn::cos(a); }, {a});
  g.check("relu", [&] { return nn::relu(a); }, {a});
  g.check("leaky_relu", [&] { return nn::leaky_relu(a, 0.1); }, {a});
  g.check("gelu", [&] { return nn::gelu(a); }, {a});
  g.check("clamp_min", [&] { return nn::clamp_min(a, 0.1); }, {a});
  g.check("phase", [&] { return nn::phase(a, b); }, {a, b});
  g.check("anti_wrap", [&] { return nn::anti_wrap(a * 4.0); }, {a});
  g.check("diff_rows", [&] { return nn::diff_rows(a); }, {a});
  g.check("diff_cols", [&] { return nn::diff_cols(a); }, {a});
}

void structural_ops(GradientSuite& g) {
  const Index rows = g.draw(2, 5), inner = g.draw(2, 5), cols = g.draw(3, 7);
  Var a = g.leaf(rows, inner), b = g.leaf(inner, cols), c = g.leaf(rows, cols), d = g.leaf(rows, cols);
  g.check("matmul", [&] { return nn::matmul(a, b); }, {a, b});
  g.check("transpose", [&] { return nn::transpose(c); }, {c});
  g.check("concat_rows", [&] {
    const Var parts[] = {c, d, nn::slice_rows(b, 0, 1)};
    return nn::concat_rows(parts);
  }, {b, c, d});
  g.check("slice_rows", [&] { return nn::slice_rows(c, 1, rows - 1); }, {c});
  g.check("slice_cols", [&] { return nn::slice_cols(c, 1, cols - 2); }, {c});
  g.check("pad_cols", [&] { return nn::pad_cols(c, 2, 1); }, {c});
  g.check("reshape", [&] { return nn::reshape(c, cols, rows); }, {c});
  g.check("sum_all", [&] {
    const Var terms[] = {c, d * 2.0, nn::square(c)};
    return nn::sum_all(terms);
  }, {c, d});
  g.check("sum", [&] { return nn::sum(c); }, {c});
  g.check("mean", [&] { return nn::mean(c); }, {c});
  g.check("mse", [&] { return nn::mse(c, d); }, {c, d});
  g.check("mae", [&] { return nn::mae(c, d); }, {c, d});
  Var table = g.leaf(5, cols);
  const int picks[] = {4, 0, 2, 2};
  g.check("gather_rows", [&] { return nn::gather_rows(table, picks); }, {table});
}

void normalisation(GradientSuite& g) {
  const Index channels = g.draw(2, 6), frames = g.draw(3, 8);
  Var x = g.leaf(channels, frames), gamma = g.leaf(channels, 1), beta = g.leaf(channels, 1);
  g.check("layer_norm", [&] { return nn::layer_norm(x, gamma, beta); }, {x, gamma, beta});
  g.check("grn global", [&] { return nn::grn(x, gamma, beta, nn::GrnMode::global); }, {x, gamma, beta});
  g.check("grn per frame", [&] { return nn::grn(x, gamma, beta, nn::GrnMode::per_frame); }, {x, gamma, beta});
}

void layers(GradientSuite& g) {
  for (bool causal : {false, true}) {
    const std::string mode = causal ? " causal" : " centred";
    const Index in = g.draw(2, 4), out = g.draw(2, 4), frames = 4 * g.draw(2, 4);

    for (Index dilation : {1, 2}) {
      nn::ParameterStore store(g.rng());
      nn::Conv1d conv(store, "conv", {in, out, 2 * g.draw(1, 3) + 1, 1, dilation, causal});
      Var x = g.leaf(in, frames);
      std::vector<Var> leaves{x};
      std::vector<std::string> labels{"x"};
      g.add_store(store, leaves, labels);
      g.check("Conv1d" + mode + " dilation " + std::to_string(dilation), [&] { return conv(x); }, leaves, labels);
    }
    {
      const Index stride = 2 * g.draw(1, 2);
      nn::ParameterStore store(g.rng());
      nn::Conv1d down(store, "down", {in, out, causal ? 2 * stride - 1 : stride + 1, stride, 1, causal});
      Var x = g.leaf(in, stride * g.draw(2, 4));
      std::vector<Var> leaves{x};
      std::vector<std::string> labels{"x"};
      g.add_store(store, leaves, labels);
      g.check("strided Conv1d" + mode, [&] { return down(x); }, leaves, labels);

      nn::ParameterStore up_store(g.rng());
      nn::ConvTranspose1d up(up_store, "up", {in, out, 2 * stride, stride, 1, causal});
      Var z = g.leaf(in, g.draw(2, 5));
      std::vector<Var> up_leaves{z};
      std::vector<std::string> up_labels{"x"};
      g.add_store(up_store, up_leaves, up_labels);
      g.check("ConvTranspose1d" + mode, [&] { return up(z); }, up_leaves, up_labels);
    }
    {
      nn::ParameterStore store(g.rng());
      nn::DepthwiseConv1d dw(store, "dw", in, 2 * g.draw(1, 3) + 1, causal);
      Var x = g.leaf(in, frames);
      std::vector<Var> leaves{x};
      std::vector<std::string> labels{"x"};
      g.add_store(store, leaves, labels);
      g.check("DepthwiseConv1d" + mode, [&] { return dw(x); }, leaves, labels);
    }
    {
      nn::ParameterStore store(g.rng());
      nn::ConvNeXtBlock block(store, "block", in, g.draw(3, 6), 2 * g.draw(1, 3) + 1, causal);
      Var x = g.leaf(in, frames);
      std::vector<Var> leaves{x};
      std::vector<std::string> labels{"x"};
      g.add_store(store, leaves, labels, 0.5);
      g.check("ConvNeXtBlock" + mode, [&] { return block(x); }, leaves, labels);
    }
  }
  {
    const Index in = g.draw(2, 4), out = g.draw(2, 4), frames = g.draw(3, 7);
    nn::ParameterStore store(g.rng());
    nn::FeedForward ff(store, "ff", in, out);
    nn::LayerNorm norm(store, "norm", in);
    nn::Grn grn(store, "grn", in, nn::GrnMode::per_frame);
    Var x = g.leaf(in, frames);
    std::vector<Var> leaves{x};
    std::vector<std::string> labels{"x"};
    g.add_store(store, leaves, labels);
    g.check("FeedForward/LayerNorm/Grn", [&] { return ff(grn(norm(x))); }, leaves, labels);
  }
  {
    const Index height = g.draw(5, 8), width = g.draw(3, 5), in = g.draw(1, 3), out = g.draw(2, 3);
    Var image = g.leaf(in, height * width);
    Var weight = g.leaf(out, 3 * 2 * in), bias = g.leaf(out, 1);
    const nn::Conv2dGeometry geometry{3, 2, 2, 1, 1, 0};
    g.check("conv2d", [&] { return nn::conv2d(image, height, width, weight, bias, geometry); },
            {image, weight, bias});
  }
  for (Framing framing : {Framing::centered, Framing::causal}) {
    const StftConfig cfg(16, 4, 32, 16000, framing);
    const std::string mode = framing == Framing::causal ? " causal" : " centred";
    Var wave = g.leaf(1, 4 * g.draw(4, 10));
    g.check("stft" + mode, [&] { return nn::stft(wave, cfg); }, {wave});
    Var spec = g.leaf(2 * cfg.bins(), g.draw(3, 8));
    g.check("istft" + mode, [&] { return nn::istft(spec, cfg); }, {spec});
    g.check("magnitude", [&] { return nn::magnitude(nn::real_part(spec), nn::imag_part(spec)); }, {spec});
  }
}

void codec_graph(GradientSuite& g) {
  for (bool causal : {false, true}) {
    CodecConfig c;
    c.channels = 4;
    c.hidden = int(g.draw(4, 6));
    c.code_dim = 2;
    c.downsample = 2;
    c.blocks = 1;
    c.conv_kernel = 3;
    c.deconv_kernel = 4;
    c.decoder_width = int(g.draw(3, 5));
    c.stages = 2;
    c.codebook_size = 4;
    c.stft = StftConfig(8, 2, 8, 1000);
    c.causal = causal;
    CodecModel model(c, g.rng());
    const Index frames = 2 * g.draw(2, 3);
    Var amplitude = g.leaf(c.stft.bins(), frames), phase = g.leaf(c.stft.bins(), frames);
    std::vector<Var> leaves{amplitude, phase};
    std::vector<std::string> labels{"amplitude", "phase"};
    for (const auto& e : model.parameters().entries())
      if (e.name.rfind("quantizer", 0) != 0) {
        Var v = e.var;
        v.mutable_value() += gradcheck::random_matrix(v.rows(), v.cols(), g.rng, 0.3);
        leaves.push_back(v);
        labels.push_back(e.name);
      }
    g.check(std::string("encoder and decoder") + (causal ? " causal" : " centred"), [&] {
      const DecodedFrames d = model.decode(model.encode(amplitude, phase));
      const Var parts[] = {d.log_amplitude, d.real, d.imag};
      return nn::concat_rows(parts);
    }, leaves, labels);
  }
}

void loss_terms(GradientSuite& g) {
  const Index bins = g.draw(3, 6), frames = g.draw(3, 7);
  Var a = g.leaf(bins, frames), b = g.leaf(bins, frames);
  g.check("amplitude loss", [&] { return amplitude_loss(a, b); }, {a, b});
  g.check("instantaneous phase loss", [&] { return phase_loss(a, b).instantaneous; }, {a, b});
  g.check("group delay loss", [&] { return phase_loss(a, b).group_delay; }, {a, b});
  g.check("angular frequency loss", [&] { return phase_loss(a, b).angular_frequency; }, {a, b});
  g.check("polar to complex", [&] {
    auto [re, im] = complex_from_amp_phase(a, b);
    const Var parts[] = {re, im};
    return nn::concat_rows(parts);
  }, {a, b});

  for (Framing framing : {Framing::centered, Framing::causal}) {
    const StftConfig cfg(8, 2, 8, 1000, framing);
    const Index n = g.draw(4, 7);
    Var re = g.leaf(cfg.bins(), n), im = g.leaf(cfg.bins(), n);
    Var tre = g.leaf(cfg.bins(), n), tim = g.leaf(cfg.bins(), n);
    g.check("complex spectrum loss", [&] { return complex_spectrum_loss(re, im, tre, tim, cfg, 2.25).total; },
            {re, im, tre, tim});
    g.check("consistency loss", [&] { return complex_spectrum_loss(re, im, tre, tim, cfg, 0.0).consistency; },
            {re, im});
  }

  const StftConfig mel_cfg(16, 4, 16, 8000);
  const MatrixXd filterbank = mel_filterbank<double>(4, mel_cfg);
  const Index samples = 4 * g.draw(8, 16);
  Var w1 = g.leaf(1, samples), w2 = g.leaf(1, samples);
  g.check("log mel", [&] { return log_mel(w1, mel_cfg, filterbank); }, {w1});
  g.check("mel loss", [&] { return mel_loss(w1, w2, mel_cfg, filterbank); }, {w1, w2});

  Var p = g.leaf(bins, frames);
  const LossWeights weights;
  g.check("spectral-level loss", [&] {
    const SpectralTerms terms{amplitude_loss(a, b), phase_loss(p, b).total, nn::mean(nn::square(a - p)),
                              nn::mae(p, a)};
    return spectral_level_loss(terms, weights);
  }, {a, b, p});

  Var s1 = g.leaf(g.draw(1, 3), g.draw(3, 6), 2.0), s2 = g.leaf(s1.rows(), s1.cols(), 2.0);
  g.check("generator hinge loss", [&] { return generator_adversarial(s1); }, {s1});
  g.check("discriminator hinge loss", [&] { return discriminator_adversarial(s1, s2); }, {s1, s2});
  Var f1 = g.leaf(3, 4), f2 = g.leaf(3, 4);
  g.check("feature matching", [&] {
    const std::vector<Var> real{s1, f1}, fake{s2, f2};
    return feature_matching(real, fake);
  }, {s1, s2, f1, f2});

  const StftConfig base(16, 4, 16, 1000);
  DiscriminatorConfig dc = DiscriminatorConfig::small();
  dc.period_channels = {2, 3, 3, 2, 2};
  dc.resolution_channels = 2;
  DiscriminatorBank bank(base, dc, g.rng());
  for (const auto& e : bank.parameters().entries())
    Var(e.var).mutable_value() = gradcheck::random_matrix(e.var.rows(), e.var.cols(), g.rng, 0.5);
  const Index wave_len = 8 * g.draw(7, 9);
  Var fake = g.leaf(1, wave_len);
  const Var real = nn::constant(g.values(1, wave_len));
  std::vector<Var> leaves{fake};
  std::vector<std::string> labels{"waveform"};
  for (const auto& e : bank.parameters().entries()) {
    leaves.push_back(e.var);
    labels.push_back(e.name);
  }
  g.check("discriminator GAN loss", [&] { return discriminator_gan_loss(bank(real), bank(fake), 0.1); }, leaves,
          labels);
  g.check("generator GAN loss", [&] { return generator_gan_loss(bank(real), bank(fake), 0.1); }, {fake},
          {"waveform"});

  nn::TapList teacher, student;
  Var t1 = g.leaf(2, 5), t2 = g.leaf(3, 2);
  teacher.add("a", nn::constant(g.values(2, 5)));
  teacher.add("b", nn::constant(g.values(3, 2)));
  student.add("a", t1);
  student.add("b", t2);
  g.check("distillation loss", [&] { return kd_loss(teacher, student); }, {t1, t2});
}

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  GradientSuite g;
  elementwise_ops(g);
  structural_ops(g);
  normalisation(g);
  layers(g);
  codec_graph(g);
  loss_terms(g);
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = g.failures.empty() && elapsed < kGradientBudgetSeconds;
  o.detail = (Detail() << g.checks << " checks, worst relative error " << g.worst << " (" << g.worst_name << "), "
                       << elapsed << " s")
                 .str();
  for (const auto& f : g.failures) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------------------

Outcome rvq_oracle() {
  std::mt19937_64 rng(7);
  auto draw = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int mismatches = 0;
  double telescope = 0;
  for (int instance = 0; instance < kRvqInstances; ++instance) {
    const int stages = draw(1, 4), entries = draw(2, 16), dim = draw(1, 6), frames = draw(1, 8);
    std::vector<MatrixXd> books;
    for (int q = 0; q < stages; ++q) {
      MatrixXd b = gradcheck::random_matrix(entries, dim, rng, 1.0 / (q + 1));
      if (instance % 10 == 0) b.row(entries - 1) = b.row(0);  // exact ties go to the lower index
      books.push_back(b);
    }
    const MatrixXd code = gradcheck::random_matrix(dim, frames, rng);

    nn::ParameterStore store(1);
    ResidualVQ vq(store, "vq", stages, entries, dim);
    for (int q = 0; q < stages; ++q) Var(vq.codebook_vars()[q]).mutable_value() = books[q];
    const RvqTrace<double> trace = vq.quantize(code);

    // Exhaustive search over every entry, stage by stage.
    MatrixXd residual = code;
    for (int q = 0; q < stages; ++q)
      for (int f = 0; f < frames; ++f) {
        Index best = 0;
        double best_dist = (residual.col(f) - books[q].row(0).transpose()).squaredNorm();
        for (Index m = 1; m < entries; ++m) {
          const double d = (residual.col(f) - books[q].row(m).transpose()).squaredNorm();
          if (d < best_dist) {
            best_dist = d;
            best = m;
          }
        }
        if (trace.tokens(q, f) != best) ++mismatches;
        residual.col(f) -= books[q].row(best).transpose();
      }
    telescope = std::max(telescope, (trace.quantized + trace.residual - code).cwiseAbs().maxCoeff());
  }
  Outcome o;
  o.pass = mismatches == 0 && telescope <= kTelescopeTolerance;
  o.detail = (Detail() << kRvqInstances << " instances, " << mismatches << " token mismatches, telescoping error "
                       << telescope)
                 .str();
  return o;
}

Outcome bitstream_fuzz() {
  std::mt19937_64 rng(8);
  auto draw = [&](std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
  };
  long frames_done = 0;
  int streams = 0, failures = 0;
  while (frames_done < kFuzzFrames) {
    StreamHeader h;
    h.sample_rate = 16000;
    h.frame_shift = 40;
    h.frame_length = 320;
    h.fft_size = 1024;
    h.downsample = 8;
    h.code_dim = 32;
    h.stages = draw(1, 8);
    h.codebook_size = streams % 4 == 0 ? (1u << draw(1, 12)) : draw(2, 5000);
    h.frames = std::min<std::uint32_t>(draw(0, 120), std::uint32_t(kFuzzFrames - frames_done));
    TokenMatrix tokens(h.stages, h.frames);
    for (Index i = 0; i < tokens.size(); ++i) tokens(i) = std::int32_t(draw(0, h.codebook_size - 1));

    std::uint64_t bits = 0;
    while ((std::uint64_t(1) << bits) < h.codebook_size) ++bits;
    const std::uint64_t payload = (std::uint64_t(h.frames) * h.stages * bits + 7) / 8;

    const std::vector<std::uint8_t> packed = pack_tokens(h, tokens);
    const UnpackedStream back = unpack_tokens(packed);
    const bool ok = payload_bytes(h) == payload && packed.size() == kBitstreamHeaderBytes + payload &&
                    back.header == h && back.tokens == tokens;
    if (!ok) ++failures;
    frames_done += h.frames;
    ++streams;
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = (Detail() << frames_done << " frames in " << streams << " streams, " << failures << " failures").str();
  return o;
}

Outcome loss_fixed_points() {
  std::mt19937_64 rng(9);
  std::vector<std::pair<std::string, double>> values;
  auto record = [&](const std::string& name, const Var& v) { values.emplace_back(name, std::abs(v.item())); };

  const MatrixXd amp = gradcheck::random_matrix(9, 7, rng);
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  MatrixXd ph(9, 7);
  for (Index i = 0; i < ph.size(); ++i) ph(i) = angle(rng);
  record("amplitude", amplitude_loss(nn::constant(amp), nn::constant(amp)));
  const PhaseLosses same = phase_loss(nn::constant(ph), nn::constant(ph));
  record("instantaneous phase", same.instantaneous);
  record("group delay", same.group_delay);
  record("angular frequency", same.angular_frequency);
  record("phase shifted by 2 pi", phase_loss(nn::constant(ph.array() + 2 * kPi), nn::constant(ph)).total);

  const StftConfig cfg(320, 40, 1024, 16000);
  const VectorXd wave = gaussian_noise(1600, rng, 0.3);
  const ComplexSpectrum<double> spec = stft_complex<double>(wave, cfg);
  const Var re = nn::constant(spec.real), im = nn::constant(spec.imag);
  const ComplexLosses complex = complex_spectrum_loss(re, im, re, im, cfg, 2.25);
  record("real/imaginary", complex.real_imag);
  record("consistency", complex.consistency);
  // Causal synthesis cannot complete the last frame_length - frame_shift
  // samples, so its consistent spectra come from waveforms that end in silence.
  VectorXd settled = wave;
  settled.tail(cfg.frame_length() - cfg.frame_shift()).setZero();
  const ComplexSpectrum<double> causal_spec = stft_complex<double>(settled, cfg.with_framing(Framing::causal));
  record("consistency causal",
         complex_spectrum_loss(nn::constant(causal_spec.real), nn::constant(causal_spec.imag),
                               nn::constant(causal_spec.real), nn::constant(causal_spec.imag),
                               cfg.with_framing(Framing::causal), 2.25)
             .consistency);

  const Var w = nn::constant(wave.transpose());
  record("mel", mel_loss(w, w, cfg, mel_filterbank<double>(80, cfg)));
  const Var zero = nn::scalar(0);
  record("spectral-level", spectral_level_loss({zero, zero, zero, zero}, LossWeights{}));

  nn::ParameterStore store(2);
  ResidualVQ vq(store, "vq", 2, 4, 3);
  const MatrixXd code = gradcheck::random_matrix(3, 1, rng);
  MatrixXd first = MatrixXd::Zero(4, 3);
  first.row(2) = code.transpose();
  Var(vq.codebook_vars()[0]).mutable_value() = first;
  Var(vq.codebook_vars()[1]).mutable_value() = MatrixXd::Zero(4, 3);
  record("quantization", vq.forward(nn::constant(code)).loss);

  auto scores = [](double v) { return nn::constant(MatrixXd::Constant(1, 6, v)); };
  record("generator hinge", generator_adversarial(scores(1)));
  record("discriminator hinge", discriminator_adversarial(scores(1), scores(-1)));
  const std::vector<Var> features{nn::constant(gradcheck::random_matrix(3, 4, rng))};
  record("feature matching", feature_matching(features, features));

  auto bank = [&](double score) {
    DiscriminatorOutput out;
    auto sub = [&] {
      SubDiscriminatorOutput s;
      s.score = scores(score);
      s.features = {nn::constant(MatrixXd::Ones(2, 3)), s.score};
      return s;
    };
    for (int i = 0; i < 5; ++i) out.period.push_back(sub());
    for (int i = 0; i < 3; ++i) out.resolution.push_back(sub());
    return out;
  };
  record("generator GAN aggregate", generator_gan_loss(bank(1), bank(1), 0.1));
  record("discriminator GAN aggregate", discriminator_gan_loss(bank(1), bank(-1), 0.1));

  nn::TapList taps;
  taps.add("x", nn::constant(gradcheck::random_matrix(4, 5, rng)));
  record("distillation", kd_loss(taps, taps));

  Outcome o;
  double worst = 0;
  for (const auto& [name, v] : values) {
    worst = std::max(worst, v);
    if (!(v < kFixedPointTolerance)) {
      o.pass = false;
      o.detail += name + " = " + std::to_string(v) + "; ";
    }
  }

  std::uniform_real_distribution<double> ux(-50, 50);
  std::uniform_int_distribution<int> uk(-20, 20);
  double periodicity = 0, range_violations = 0;
  for (int n = 0; n < 10000; ++n) {
    const double x = ux(rng);
    const int k = uk(rng);
    const double f = anti_wrap(x);
    if (f < 0 || f > kPi) ++range_violations;
    periodicity = std::max(periodicity, std::abs(anti_wrap(x + 2 * kPi * k) - f));
  }
  if (!(periodicity < kPeriodicityTolerance) || range_violations > 0) o.pass = false;
  o.detail += (Detail() << values.size() << " losses at identity, largest " << worst
                        << "; anti-wrap periodicity error " << periodicity << " over 10000 draws")
                  .str();
  return o;
}

// ---------------------------------------------------------------------------

double moving_average(const std::vector<double>& v, std::size_t first) {
  double s = 0;
  for (std::size_t i = first; i < first + kMovingWindow; ++i) s += v[i];
  return s / kMovingWindow;
}

Outcome overfit() {
  const auto start = std::chrono::steady_clock::now();
  const CodecConfig codec = CodecConfig::tiny();
  TrainConfig train;
  train.steps = kOverfitSteps;
  train.seed = 12;
  const VectorXd clip = harmonic_clip(codec.stft.sample_rate(), 13);
  const StftConfig metric = metric_stft(codec.stft.sample_rate());

  Trainer trainer(codec, train);
  const double lsd_before = lsd(trainer.model().resynthesize(clip), clip, metric);
  std::vector<double> amplitude;
  for (int s = 0; s < kOverfitSteps; ++s) {
    const std::vector<VectorXd> batch{random_segment(clip, train.segment, trainer.rng())};
    amplitude.push_back(trainer.step(batch).amplitude);
    trainer.end_epoch();  // one clip, so every step is a full pass
  }
  const double lsd_after = lsd(trainer.model().resynthesize(clip), clip, metric);
  const double early = moving_average(amplitude, 0);
  const double late = moving_average(amplitude, amplitude.size() - kMovingWindow);
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = late <= (1 - kRequiredReduction) * early && lsd_after < lsd_before && elapsed < kOverfitBudgetSeconds;
  o.detail = (Detail() << "amplitude loss " << early << " -> " << late << " (" << 100 * (1 - late / early)
                       << "% lower), LSD " << lsd_before << " -> " << lsd_after << " dB, " << elapsed << " s")
                 .str();
  return o;
}

Outcome distillation() {
  const auto start = std::chrono::steady_clock::now();
  const VectorXd clip = harmonic_clip(16000, 23);

  // A briefly trained non-causal teacher on the same clip.
  TrainConfig teacher_train;
  teacher_train.segment = 1280;
  teacher_train.seed = 21;
  Trainer teacher_trainer(CodecConfig::tiny(), teacher_train);
  for (int s = 0; s < kTeacherSteps; ++s) {
    const std::vector<VectorXd> batch{random_segment(clip, teacher_train.segment, teacher_trainer.rng())};
    teacher_trainer.step(batch);
    teacher_trainer.end_epoch();
  }
  auto teacher = std::make_shared<CodecModel>(std::move(teacher_trainer.model()));
  teacher->parameters().zero_grad();  // left over from its own training
  std::vector<MatrixXd> frozen;
  for (const auto& e : teacher->parameters().entries()) frozen.push_back(e.var.value());

  TrainConfig train;
  train.steps = kDistillSteps;
  train.segment = 1280;
  train.seed = 22;
  train.weights.distillation = 1.0;
  Trainer trainer(tiny_causal(), train);
  trainer.set_teacher(teacher);
  std::vector<double> kd;
  for (int s = 0; s < kDistillSteps; ++s) {
    const std::vector<VectorXd> batch{random_segment(clip, train.segment, trainer.rng())};
    kd.push_back(trainer.step(batch).distillation);
    trainer.end_epoch();
  }
  bool identical = true;
  const auto& entries = teacher->parameters().entries();
  for (std::size_t i = 0; i < entries.size(); ++i)
    identical = identical && (entries[i].var.value().array() == frozen[i].array()).all() && !entries[i].var.has_grad();
  const double early = moving_average(kd, 0);
  const double late = moving_average(kd, kd.size() - kMovingWindow);
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = late < early && identical && elapsed < kDistillBudgetSeconds;
  o.detail = (Detail() << "distillation loss " << early << " -> " << late << ", teacher "
                       << (identical ? "bit-identical" : "CHANGED") << ", " << elapsed << " s")
                 .str();
  return o;
}

Outcome metrics() {
  std::mt19937_64 rng(10);
  const StftConfig cfg = metric_stft(16000);
  double identical = 0;
  for (const VectorXd& x : {gaussian_noise(16000, rng, 0.3), harmonic_clip(16000, 11)}) {
    const PhaseDistance p = awpd(x, x, cfg);
    identical = std::max({identical, lsd(x, x, cfg), mcd(x, x, cfg), p.instantaneous, p.group_delay,
                          p.angular_frequency});
  }
  double lo = 1e9, hi = 0;
  for (int pair = 0; pair < 5; ++pair) {
    const VectorXd a = gaussian_noise(16000, rng, 0.3), b = gaussian_noise(16000, rng, 0.3);
    const double ip = awpd(a, b, cfg).instantaneous;
    lo = std::min(lo, ip);
    hi = std::max(hi, ip);
  }
  Outcome o;
  o.pass = identical < kIdenticalMetricTolerance && lo >= kNoisePhaseCentre - kNoisePhaseHalfWidth &&
           hi <= kNoisePhaseCentre + kNoisePhaseHalfWidth;
  o.detail = (Detail() << "identical inputs max " << identical << "; white-noise instantaneous phase distance in ["
                       << lo << ", " << hi << "] rad")
                 .str();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"bitrate of the six reference configurations", bitrate},
      {"algorithmic latency of the causal model", latency},
      {"streaming equals batch inference", streaming},
      {"STFT/ISTFT round trip", stft_round_trip},
      {"phase formula against atan2", phase_formula},
      {"finite-difference gradient suite", gradients},
      {"residual VQ against exhaustive search", rvq_oracle},
      {"bitstream fuzz round trip", bitstream_fuzz},
      {"loss fixed points and anti-wrap periodicity", loss_fixed_points},
      {"overfit smoke test", overfit},
      {"distillation plumbing", distillation},
      {"metric sanity", metrics},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
