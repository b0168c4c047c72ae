#pragma once

// Block-wise inference for causal models.
//
// The encoder consumes samples and emits one code frame per hop (frame_shift *
// downsample samples). The decoder turns each code frame into one hop of
// audio. Decoded audio is the batch reconstruction delayed by the analysis
// overlap (frame_length - frame_shift samples): the last samples of a block
// are only final once the next block's windows have been added, so the
// stream starts with that many samples of silence and flush() returns the
// tail.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "apcodec/codec.hpp"

namespace apcodec {

class StreamEncoder {
 public:
  /// Throws ModeError for non-causal models.
  explicit StreamEncoder(const CodecModel& model);

  /// Returns the code frames (code_dim x n) completed by these samples.
  Eigen::MatrixXd push(std::span<const double> samples);
  void reset();

  /// Samples waiting for a full hop.
  Eigen::Index pending() const { return Eigen::Index(pending_.size()); }
  Eigen::Index frames_emitted() const { return frames_; }

 private:
  const CodecModel* model_;
  Eigen::VectorXd history_;  // last frame_length - frame_shift samples
  std::vector<double> pending_;
  SpectralFrames<double> previous_;  // spectra of the previous hop, when the downsampler reaches back
  Eigen::Index frames_ = 0;
};

class StreamDecoder {
 public:
  explicit StreamDecoder(const CodecModel& model);

  /// Appends code frames (code_dim x n) and returns hop * n samples.
  Eigen::VectorXd push_code(const Eigen::MatrixXd& code);
  Eigen::VectorXd push_tokens(const TokenMatrix& tokens);
  /// Returns the final frame_length - frame_shift samples and resets.
  Eigen::VectorXd flush();
  void reset();

  Eigen::Index frames_consumed() const { return frames_; }

 private:
  const CodecModel* model_;
  Eigen::MatrixXd context_;  // previous code frames the upsampler still reaches
  Eigen::VectorXd acc_;      // overlap-add buffer, padded coordinates from the current hop
  Eigen::VectorXd norm_;     // matching sum of squared windows
  Eigen::Index frames_ = 0;
};

/// Encoder and decoder back to back, optionally through the quantiser.
class StreamCodec {
 public:
  explicit StreamCodec(const CodecModel& model, bool quantize = true);

  Eigen::VectorXd push(std::span<const double> samples);
  Eigen::VectorXd flush();
  void reset();

  /// Tokens produced so far (stages x frames); empty when not quantising.
  const TokenMatrix& tokens() const { return tokens_; }
  /// Samples of leading silence before the reconstruction starts.
  Eigen::Index delay() const;

 private:
  const CodecModel* model_;
  bool quantize_;
  StreamEncoder encoder_;
  StreamDecoder decoder_;
  TokenMatrix tokens_;
};

struct LatencyReport {
  Eigen::Index first_output_after = 0;  // input samples consumed before the first output
  Eigen::Index probe_latency = 0;       // max over t of (samples consumed when the earliest affected output left) - t
  Eigen::Index violations = 0;          // perturbations that changed output before their own hop
  Eigen::Index probes = 0;
  Eigen::Index silent_probes = 0;       // perturbations that changed nothing
};

/// Perturbs each `stride`-th input sample of `signal` and finds the earliest
/// output sample that changes.
LatencyReport measure_latency(const CodecModel& model, const Eigen::VectorXd& signal, Eigen::Index stride = 1,
                              bool quantize = false);

}  // namespace apcodec
