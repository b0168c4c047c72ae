#pragma once

// RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float audio.

#include <Eigen/Dense>

#include <filesystem>
#include <string>

namespace apcodec {

enum class SampleFormat { pcm16, float32 };

struct WavFile {
  Eigen::VectorXd samples;  // interleaved, scaled to [-1, 1)
  int sample_rate = 0;
  int channels = 0;
  SampleFormat format = SampleFormat::pcm16;

  Eigen::Index frames() const { return channels > 0 ? samples.size() / channels : 0; }
  /// The samples of a mono file; AudioFormatError otherwise.
  const Eigen::VectorXd& mono() const;
};

WavFile parse_wav(const std::string& bytes);
std::string serialize_wav(const WavFile& wav);

/// IoError when the file cannot be opened, AudioFormatError when it is not a
/// supported WAV file.
WavFile read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WavFile& wav);

/// Mono WAV from samples; PCM16 output saturates at full scale.
WavFile mono_wav(const Eigen::VectorXd& samples, int sample_rate, SampleFormat format = SampleFormat::pcm16);

}  // namespace apcodec
