#pragma once

// Encoder/decoder graphs and batch inference.
//
// Both sub-encoders map (bins x F) spectra to (channels/2 x F/D); their
// outputs are stacked and projected to the (code_dim x F/D) latent code. The
// decoder expands the code back to channels/2, upsamples each branch by D and
// predicts the log amplitude and, through two parallel heads, the real and
// imaginary parts whose phase becomes the decoded phase.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "apcodec/bitstream.hpp"
#include "apcodec/dsp.hpp"
#include "apcodec/nn/checkpoint.hpp"
#include "apcodec/nn/layers.hpp"
#include "apcodec/quantizer.hpp"

namespace apcodec {

struct CodecConfig {
  int channels = 256;       // encoder/decoder width
  int hidden = 512;         // ConvNeXt inner width
  int code_dim = 32;
  int downsample = 8;
  int blocks = 8;
  int conv_kernel = 7;
  int deconv_kernel = 16;
  int decoder_width = 512;  // width of the last decoder feed-forward layer
  int stages = 4;
  int codebook_size = 1024;
  StftConfig stft;          // framing is overridden by `causal`
  bool causal = false;

  /// 48/24/16 kHz reference model with the given number of quantiser stages.
  static CodecConfig reference(int sample_rate, int stages);
  /// Desk-scale model used by the smoke tests.
  static CodecConfig tiny();

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  /// STFT settings used by this model (causal framing when `causal`).
  StftConfig analysis() const;
  /// Samples per code frame, frame_shift * downsample.
  int hop() const { return stft.frame_shift() * downsample; }
  double code_rate() const { return double(stft.sample_rate()) / hop(); }
  double bitrate_kbps() const;

  /// Scalar parameter count implied by the configuration (codebooks included).
  std::int64_t parameter_count() const;

  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static CodecConfig from_json(const std::string& text);

  bool operator==(const CodecConfig&) const = default;
};

/// Continuous latent code, (code_dim x code frames).
struct LatentCode {
  Eigen::MatrixXd values;
  double frame_rate = 0;
};

struct DecodedFrames {
  nn::Var log_amplitude;
  nn::Var real;
  nn::Var imag;
  nn::Var phase;
};

struct ForwardPass {
  nn::Var code;
  ResidualVQ::Output quantized;
  DecodedFrames decoded;
};

/// Tap name and shape per code frame (rows, columns per code frame).
struct TapShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols_per_code_frame = 0;
  bool operator==(const TapShape&) const = default;
};

class CodecModel {
 public:
  explicit CodecModel(const CodecConfig& config, std::uint64_t seed = 0);
  ~CodecModel();
  CodecModel(CodecModel&&) noexcept;
  CodecModel& operator=(CodecModel&&) noexcept;

  const CodecConfig& config() const;
  nn::ParameterStore& parameters();
  const nn::ParameterStore& parameters() const;
  ResidualVQ& quantizer();
  const ResidualVQ& quantizer() const;

  // Differentiable graph. Every conv/feed-forward layer, every block and the
  // quantiser output is recorded in `taps` when given. Non-finite activations
  // raise NonFiniteError naming the layer.
  nn::Var encode(const nn::Var& log_amplitude, const nn::Var& phase, nn::TapList* taps = nullptr) const;
  DecodedFrames decode(const nn::Var& code, nn::TapList* taps = nullptr) const;
  ForwardPass forward(const SpectralFrames<double>& input, nn::TapList* taps = nullptr) const;

  // Inference without graph construction.
  Eigen::VectorXd trim(const Eigen::VectorXd& wave) const;
  SpectralFrames<double> analyze(const Eigen::VectorXd& wave) const;
  LatentCode encode(const SpectralFrames<double>& frames) const;
  SpectralFrames<double> decode(const LatentCode& code) const;
  Eigen::VectorXd reconstruct(const LatentCode& code) const;
  TokenMatrix tokenize(const Eigen::VectorXd& wave) const;
  Eigen::VectorXd detokenize(const TokenMatrix& tokens) const;
  /// trim -> analyze -> encode -> (quantise) -> decode -> reconstruct.
  Eigen::VectorXd resynthesize(const Eigen::VectorXd& wave, bool quantize = true) const;

  StreamHeader stream_header(std::uint32_t frames) const;
  /// Throws ConfigError when the header was written by an incompatible model.
  void check_header(const StreamHeader& header) const;

  /// Architecture-ordered feature taps used for distillation.
  std::vector<std::string> distill_probe_points() const;
  std::vector<TapShape> tap_shapes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Throws ConfigError unless teacher and student taps align one-to-one with equal shapes.
void check_distill_compatible(const CodecModel& teacher, const CodecModel& student);

// Model files are checkpoints whose config is a JSON object with the codec
// settings under "codec"; other keys (trainer state) are ignored here.

/// Appends the model parameters and quantiser usage statistics.
void export_model(const CodecModel& model, nn::Checkpoint& ckpt);
/// Loads parameters (required) and usage statistics (when present).
void import_model(CodecModel& model, const nn::Checkpoint& ckpt);
CodecConfig checkpoint_codec_config(const nn::Checkpoint& ckpt);
CodecModel model_from_checkpoint(const nn::Checkpoint& ckpt);

void save_model(const std::filesystem::path& path, const CodecModel& model);
CodecModel load_model(const std::filesystem::path& path);

}  // namespace apcodec
