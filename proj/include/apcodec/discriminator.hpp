#pragma once

// Multi-period and multi-resolution waveform discriminators.
//
// A period-p sub-discriminator zero-pads the waveform to a multiple of p and
// views it as a (T/p x p) map; five strided 2-D conv + leaky ReLU blocks and
// an output conv follow. A resolution sub-discriminator takes the magnitude
// spectrum at its own STFT scale as a (frames x bins) map.

#include <string>
#include <vector>

#include "apcodec/dsp.hpp"
#include "apcodec/nn/layers.hpp"

namespace apcodec {

struct DiscriminatorConfig {
  std::vector<int> periods{2, 3, 5, 7, 11};
  std::vector<int> period_channels{32, 128, 512, 1024, 1024};  // one per block
  int resolution_channels = 32;
  double slope = 0.1;

  /// Narrow variant for desk-scale training.
  static DiscriminatorConfig small();
  void validate() const;
};

/// [w_l/2, w_s/2, fft/2], [w_l, w_s, fft], [2 w_l, 2 w_s, 2 fft].
std::vector<StftConfig> resolution_configs(const StftConfig& base);

struct SubDiscriminatorOutput {
  nn::Var score;                 // (1 x pixels) score map
  std::vector<nn::Var> features; // block outputs followed by the score map
};

struct DiscriminatorOutput {
  std::vector<SubDiscriminatorOutput> period;
  std::vector<SubDiscriminatorOutput> resolution;
};

class PeriodDiscriminator {
 public:
  PeriodDiscriminator() = default;
  PeriodDiscriminator(nn::ParameterStore& store, const std::string& name, int period,
                      const DiscriminatorConfig& config);
  SubDiscriminatorOutput operator()(const nn::Var& waveform) const;
  int period() const { return period_; }

 private:
  int period_ = 1;
  double slope_ = 0.1;
  std::vector<nn::Conv2d> blocks_;
  nn::Conv2d output_;
};

class ResolutionDiscriminator {
 public:
  ResolutionDiscriminator() = default;
  ResolutionDiscriminator(nn::ParameterStore& store, const std::string& name, const StftConfig& stft,
                          const DiscriminatorConfig& config);
  SubDiscriminatorOutput operator()(const nn::Var& waveform) const;
  const StftConfig& stft() const { return stft_; }

 private:
  StftConfig stft_;
  double slope_ = 0.1;
  std::vector<nn::Conv2d> blocks_;
  nn::Conv2d output_;
};

class DiscriminatorBank {
 public:
  /// `base` is the codec's analysis STFT; its centred version seeds the three resolutions.
  DiscriminatorBank(const StftConfig& base, const DiscriminatorConfig& config, std::uint64_t seed = 0);

  /// `waveform` is (1 x T); T must be a multiple of 2 * base frame shift and
  /// at least 2 * base frame length.
  DiscriminatorOutput operator()(const nn::Var& waveform) const;

  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  nn::ParameterStore store_;
  std::vector<PeriodDiscriminator> period_;
  std::vector<ResolutionDiscriminator> resolution_;
};

}  // namespace apcodec
