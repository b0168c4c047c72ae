#include "apcodec/losses.hpp"

#include <cmath>
#include <numbers>

#include "apcodec/nn/signal.hpp"

namespace apcodec {

using nn::Var;

void LossWeights::validate() const {
  for (double w : {phase, real_imag, complex, mel, spectral, quantization, resolution, distillation})
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
}

double anti_wrap(double x) {
  constexpr double two_pi = 2 * std::numbers::pi;
  return std::abs(x - two_pi * std::round(x / two_pi));
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + " differ");
}

}  // namespace

Var amplitude_loss(const Var& predicted, const Var& target) {
  require_same_shape(predicted, target, "amplitude_loss");
  return nn::mse(predicted, target);
}

PhaseLosses phase_loss(const Var& predicted, const Var& target) {
  require_same_shape(predicted, target, "phase_loss");
  if (predicted.rows() < 2 || predicted.cols() < 2)
    throw ValidationError("phase_loss needs at least two bins and two frames");
  PhaseLosses out;
  out.instantaneous = nn::mean(nn::anti_wrap(predicted - target));
  out.group_delay = nn::mean(nn::anti_wrap(nn::diff_rows(predicted) - nn::diff_rows(target)));
  out.angular_frequency = nn::mean(nn::anti_wrap(nn::diff_cols(predicted) - nn::diff_cols(target)));
  out.total = out.instantaneous + out.group_delay + out.angular_frequency;
  return out;
}

ComplexLosses complex_spectrum_loss(const Var& real, const Var& imag, const Var& target_real,
                                    const Var& target_imag, const StftConfig& cfg, double real_imag_weight) {
  require_same_shape(real, target_real, "complex_spectrum_loss");
  require_same_shape(imag, target_imag, "complex_spectrum_loss");
  require_same_shape(real, imag, "complex_spectrum_loss");
  const double cells = double(real.value().size());
  ComplexLosses out;
  out.real_imag = nn::mae(real, target_real) + nn::mae(imag, target_imag);
  const Var parts[] = {real, imag};
  const Var spectrum = nn::concat_rows(parts);
  const Var projected = nn::stft(nn::istft(spectrum, cfg), cfg);
  out.consistency = nn::sum(nn::square(spectrum - projected)) * (1.0 / cells);
  out.total = out.real_imag * real_imag_weight + out.consistency;
  return out;
}

std::pair<Var, Var> complex_from_amp_phase(const Var& log_amplitude, const Var& phase) {
  require_same_shape(log_amplitude, phase, "complex_from_amp_phase");
  const Var magnitude = nn::exp(log_amplitude, kMaxLinearAmplitude);
  return {magnitude * nn::cos(phase), magnitude * nn::sin(phase)};
}

Var log_mel(const Var& waveform, const StftConfig& cfg, const nn::Matrix& filterbank) {
  if (filterbank.cols() != cfg.bins()) throw ValidationError("mel filterbank does not match the STFT size");
  const Var spec = nn::stft(waveform, cfg);
  const Var mag = nn::magnitude(nn::real_part(spec), nn::imag_part(spec));
  return nn::log(nn::clamp_min(nn::matmul(nn::constant(filterbank), mag), kAmplitudeFloor));
}

Var mel_loss(const Var& predicted, const Var& target, const StftConfig& cfg, const nn::Matrix& filterbank) {
  require_same_shape(predicted, target, "mel_loss");
  const Var a = log_mel(predicted, cfg, filterbank);
  const Var b = log_mel(target, cfg, filterbank);
  return nn::mae(a, b) + nn::mse(a, b);
}

Var spectral_level_loss(const SpectralTerms& t, const LossWeights& w) {
  return t.amplitude + t.phase * w.phase + t.complex * w.complex + t.mel * w.mel;
}

Var generator_adversarial(const Var& fake_score) { return nn::mean(nn::relu(nn::add_scalar(-fake_score, 1.0))); }

Var discriminator_adversarial(const Var& real_score, const Var& fake_score) {
  return nn::mean(nn::relu(nn::add_scalar(-real_score, 1.0))) + nn::mean(nn::relu(nn::add_scalar(fake_score, 1.0)));
}

Var feature_matching(std::span<const Var> real, std::span<const Var> fake) {
  if (real.size() != fake.size()) throw ValidationError("feature_matching: layer counts differ");
  if (real.empty()) return nn::scalar(0.0);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < real.size(); ++i) {
    require_same_shape(real[i], fake[i], "feature_matching");
    terms.push_back(nn::mae(real[i], fake[i]));
  }
  return nn::sum_all(terms);
}

namespace {

void require_aligned(const DiscriminatorOutput& a, const DiscriminatorOutput& b) {
  if (a.period.size() != b.period.size() || a.resolution.size() != b.resolution.size())
    throw ValidationError("discriminator outputs come from different banks");
}

}  // namespace

Var generator_gan_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake, double resolution_weight) {
  require_aligned(real, fake);
  std::vector<Var> period, resolution;
  for (std::size_t i = 0; i < fake.period.size(); ++i) {
    period.push_back(generator_adversarial(fake.period[i].score));
    period.push_back(feature_matching(real.period[i].features, fake.period[i].features));
  }
  for (std::size_t j = 0; j < fake.resolution.size(); ++j) {
    resolution.push_back(generator_adversarial(fake.resolution[j].score));
    resolution.push_back(feature_matching(real.resolution[j].features, fake.resolution[j].features));
  }
  const Var p = period.empty() ? nn::scalar(0.0) : nn::sum_all(period);
  if (resolution.empty()) return p;
  return p + nn::sum_all(resolution) * resolution_weight;
}

Var discriminator_gan_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                           double resolution_weight) {
  require_aligned(real, fake);
  std::vector<Var> period, resolution;
  for (std::size_t i = 0; i < fake.period.size(); ++i)
    period.push_back(discriminator_adversarial(real.period[i].score, fake.period[i].score));
  for (std::size_t j = 0; j < fake.resolution.size(); ++j)
    resolution.push_back(discriminator_adversarial(real.resolution[j].score, fake.resolution[j].score));
  const Var p = period.empty() ? nn::scalar(0.0) : nn::sum_all(period);
  if (resolution.empty()) return p;
  return p + nn::sum_all(resolution) * resolution_weight;
}

Var kd_loss(const nn::TapList& teacher, const nn::TapList& student) {
  if (teacher.taps.size() != student.taps.size())
    throw ConfigError("distillation taps differ in number: teacher " + std::to_string(teacher.taps.size()) +
                      ", student " + std::to_string(student.taps.size()));
  if (teacher.taps.empty()) throw ConfigError("no distillation taps");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < teacher.taps.size(); ++i) {
    const auto& [tname, tvar] = teacher.taps[i];
    const auto& [sname, svar] = student.taps[i];
    if (tvar.rows() != svar.rows() || tvar.cols() != svar.cols())
      throw ConfigError("distillation tap " + sname + " has shape " + std::to_string(svar.rows()) + "x" +
                        std::to_string(svar.cols()) + " but teacher tap " + tname + " is " +
                        std::to_string(tvar.rows()) + "x" + std::to_string(tvar.cols()));
    terms.push_back(nn::mse(svar, nn::constant(tvar.value())));
  }
  return nn::sum_all(terms) * (1.0 / double(terms.size()));
}

}  // namespace apcodec
