#include "apcodec/discriminator.hpp"

#include "apcodec/nn/signal.hpp"

namespace apcodec {

using nn::Index;
using nn::Var;

DiscriminatorConfig DiscriminatorConfig::small() {
  DiscriminatorConfig c;
  c.period_channels = {8, 16, 32, 32, 32};
  c.resolution_channels = 8;
  return c;
}

void DiscriminatorConfig::validate() const {
  if (periods.empty()) throw ConfigError("at least one discriminator period is required");
  for (int p : periods)
    if (p < 1) throw ConfigError("discriminator periods must be positive");
  if (period_channels.size() != 5) throw ConfigError("period discriminators need five block widths");
  for (int c : period_channels)
    if (c < 1) throw ConfigError("discriminator widths must be positive");
  if (resolution_channels < 1) throw ConfigError("discriminator widths must be positive");
  if (!(slope >= 0)) throw ConfigError("leaky ReLU slope must be non-negative");
}

std::vector<StftConfig> resolution_configs(const StftConfig& base) {
  const int l = base.frame_length(), s = base.frame_shift(), n = base.fft_size(), fs = base.sample_rate();
  if (l % 2 != 0 || s % 2 != 0)
    throw ConfigError("frame length and shift must be even to halve the first resolution");
  return {StftConfig(l / 2, s / 2, n / 2, fs), StftConfig(l, s, n, fs), StftConfig(2 * l, 2 * s, 2 * n, fs)};
}

PeriodDiscriminator::PeriodDiscriminator(nn::ParameterStore& store, const std::string& name, int period,
                                         const DiscriminatorConfig& config)
    : period_(period), slope_(config.slope) {
  Index in = 1;
  for (std::size_t b = 0; b < config.period_channels.size(); ++b) {
    const Index stride = b + 1 < config.period_channels.size() ? 3 : 1;
    nn::Conv2dGeometry g{5, 1, stride, 1, 2, 0};
    blocks_.emplace_back(store, name + ".block" + std::to_string(b), in, config.period_channels[b], g);
    in = config.period_channels[b];
  }
  output_ = nn::Conv2d(store, name + ".output", in, 1, nn::Conv2dGeometry{3, 1, 1, 1, 1, 0});
}

SubDiscriminatorOutput PeriodDiscriminator::operator()(const Var& waveform) const {
  if (waveform.rows() != 1) throw ValidationError("discriminator input must be a single waveform row");
  const Index rem = waveform.cols() % period_;
  Var h = rem == 0 ? waveform : nn::pad_cols(waveform, 0, period_ - rem);
  Index height = h.cols() / period_, width = period_;
  SubDiscriminatorOutput out;
  for (const nn::Conv2d& conv : blocks_) {
    h = nn::leaky_relu(conv(h, height, width), slope_);
    out.features.push_back(h);
  }
  out.score = output_(h, height, width);
  out.features.push_back(out.score);
  return out;
}

ResolutionDiscriminator::ResolutionDiscriminator(nn::ParameterStore& store, const std::string& name,
                                                 const StftConfig& stft, const DiscriminatorConfig& config)
    : stft_(stft), slope_(config.slope) {
  const Index c = config.resolution_channels;
  blocks_.emplace_back(store, name + ".block0", 1, c, nn::Conv2dGeometry{3, 9, 1, 1, 1, 4});
  for (int b = 1; b <= 3; ++b)
    blocks_.emplace_back(store, name + ".block" + std::to_string(b), c, c, nn::Conv2dGeometry{3, 9, 1, 2, 1, 4});
  blocks_.emplace_back(store, name + ".block4", c, c, nn::Conv2dGeometry{3, 3, 1, 1, 1, 1});
  output_ = nn::Conv2d(store, name + ".output", c, 1, nn::Conv2dGeometry{3, 3, 1, 1, 1, 1});
}

SubDiscriminatorOutput ResolutionDiscriminator::operator()(const Var& waveform) const {
  const Var spec = nn::stft(waveform, stft_);
  const Var mag = nn::magnitude(nn::real_part(spec), nn::imag_part(spec));
  // (bins x frames) column-major is the (frames x bins) map flattened row by row.
  Index height = mag.cols(), width = mag.rows();
  Var h = nn::reshape(mag, 1, height * width);
  SubDiscriminatorOutput out;
  for (const nn::Conv2d& conv : blocks_) {
    h = nn::leaky_relu(conv(h, height, width), slope_);
    out.features.push_back(h);
  }
  out.score = output_(h, height, width);
  out.features.push_back(out.score);
  return out;
}

DiscriminatorBank::DiscriminatorBank(const StftConfig& base, const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config), store_(seed) {
  config.validate();
  for (int p : config.periods)
    period_.emplace_back(store_, "mpd.period" + std::to_string(p), p, config);
  int r = 0;
  for (const StftConfig& s : resolution_configs(base.with_framing(Framing::centered)))
    resolution_.emplace_back(store_, "mrd.resolution" + std::to_string(r++), s, config);
}

DiscriminatorOutput DiscriminatorBank::operator()(const Var& waveform) const {
  DiscriminatorOutput out;
  for (const auto& d : period_) out.period.push_back(d(waveform));
  for (const auto& d : resolution_) out.resolution.push_back(d(waveform));
  return out;
}

}  // namespace apcodec
