#pragma once

// Objective quality metrics between a decoded signal and its reference.
//
// Both signals are truncated to the shorter length, then to a whole number of
// frame shifts, and analysed with centred framing. Every metric is averaged
// over frames and is symmetric in its two arguments.

#include <Eigen/Dense>

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "apcodec/dsp.hpp"

namespace apcodec {

/// Analysis settings for metrics at `sample_rate` (320/40/1024 framing).
StftConfig metric_stft(int sample_rate);

/// Mean over frames of the RMS over bins of 20 * log10 amplitude differences (dB).
double lsd(const Eigen::VectorXd& decoded, const Eigen::VectorXd& reference, const StftConfig& cfg);

inline constexpr int kMcdOrder = 13;
inline constexpr int kMcdMelBands = 80;

/// Orthonormal DCT-II of the log mel spectrogram, rows c_0 .. c_order.
Eigen::MatrixXd mel_cepstrum(const Eigen::VectorXd& wave, const StftConfig& cfg, int mel_bands = kMcdMelBands,
                             int order = kMcdOrder);
/// Mean over frames of (10 / ln 10) * sqrt(2 * sum_{k>=1} (a_k - b_k)^2); c_0 is ignored.
double mcd_from_cepstra(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double mcd(const Eigen::VectorXd& decoded, const Eigen::VectorXd& reference, const StftConfig& cfg);

struct PhaseDistance {
  double instantaneous = 0;      // rad
  double group_delay = 0;        // rad per bin
  double angular_frequency = 0;  // rad per frame
  /// The same distances in physical units.
  double group_delay_seconds = 0;
  double angular_frequency_rad_per_s = 0;
};

/// Per frame, the RMS over bins of the anti-wrapped phase error (or of its
/// frequency / time differences), averaged over frames.
PhaseDistance awpd_from_phase(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const StftConfig& cfg);
PhaseDistance awpd(const Eigen::VectorXd& decoded, const Eigen::VectorXd& reference, const StftConfig& cfg);

/// Processing time over audio duration.
double real_time_factor(double processing_seconds, double audio_seconds);

/// Times `run` after `warmup` untimed calls and returns the RTF of the mean
/// timed call for audio of the given duration.
double measure_rtf(const std::function<void()>& run, double audio_seconds, int warmup = 1, int repeats = 1);

struct UtteranceMetrics {
  std::string name;
  double seconds = 0;
  double lsd_db = 0;
  double mcd_db = 0;
  PhaseDistance awpd;
  double rtf = -1;  // negative when not measured
};

struct MetricReport {
  std::vector<UtteranceMetrics> utterances;
  double lsd_db = 0;
  double mcd_db = 0;
  PhaseDistance awpd;
  double rtf = -1;

  /// Recomputes the means over utterances; the RTF is total time over total duration.
  void summarize();
  std::string text() const;
  /// One JSON object per utterance followed by a summary object.
  std::string jsonl() const;
};

UtteranceMetrics evaluate_pair(const std::string& name, const Eigen::VectorXd& decoded,
                               const Eigen::VectorXd& reference, int sample_rate);

/// Pairs files by name; ValidationError when the two directories do not hold
/// the same set of .wav names.
MetricReport evaluate_directories(const std::filesystem::path& reference_dir,
                                  const std::filesystem::path& decoded_dir);

}  // namespace apcodec
