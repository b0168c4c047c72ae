#include "apcodec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "apcodec/losses.hpp"
#include "apcodec/wav.hpp"
#include "json.hpp"

namespace apcodec {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Common analysable prefix of the two signals.
std::pair<VectorXd, VectorXd> align(const VectorXd& a, const VectorXd& b, const StftConfig& cfg) {
  const Index n = std::min(a.size(), b.size()) / cfg.frame_shift() * cfg.frame_shift();
  if (n < cfg.frame_length())
    throw ValidationError("signals are too short to compare (" + std::to_string(std::min(a.size(), b.size())) +
                          " samples, need " + std::to_string(cfg.frame_length()) + ")");
  return {a.head(n), b.head(n)};
}

/// Mean over columns of the RMS down each column.
double mean_column_rms(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  return (m.array().square().colwise().mean().sqrt()).mean();
}

MatrixXd anti_wrapped(const MatrixXd& m) { return m.unaryExpr([](double x) { return anti_wrap(x); }); }

}  // namespace

StftConfig metric_stft(int sample_rate) { return StftConfig(320, 40, 1024, sample_rate); }

double lsd(const VectorXd& decoded, const VectorXd& reference, const StftConfig& cfg) {
  const auto [a, b] = align(decoded, reference, cfg);
  const SpectralFrames<double> sa = stft<double>(a, cfg);
  const SpectralFrames<double> sb = stft<double>(b, cfg);
  // ln-amplitudes to 20 log10.
  const double to_db = 20.0 / std::numbers::ln10;
  return mean_column_rms(to_db * (sa.log_amplitude - sb.log_amplitude));
}

MatrixXd mel_cepstrum(const VectorXd& wave, const StftConfig& cfg, int mel_bands, int order) {
  if (order < 1 || order >= mel_bands) throw ConfigError("cepstral order must lie in [1, mel_bands)");
  const MatrixXd logmel = mel_spectrogram<double>(wave, cfg, mel_bands);
  MatrixXd dct(order + 1, mel_bands);
  for (int k = 0; k <= order; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / mel_bands);
    for (int n = 0; n < mel_bands; ++n) dct(k, n) = scale * std::cos(std::numbers::pi * k * (n + 0.5) / mel_bands);
  }
  return dct * logmel;
}

double mcd_from_cepstra(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("cepstra have different shapes");
  if (a.rows() < 2 || a.cols() == 0) return 0.0;
  const MatrixXd d = a.bottomRows(a.rows() - 1) - b.bottomRows(b.rows() - 1);
  const double k = 10.0 / std::numbers::ln10;
  return (k * (2.0 * d.array().square().colwise().sum()).sqrt()).mean();
}

double mcd(const VectorXd& decoded, const VectorXd& reference, const StftConfig& cfg) {
  const auto [a, b] = align(decoded, reference, cfg);
  return mcd_from_cepstra(mel_cepstrum(a, cfg), mel_cepstrum(b, cfg));
}

PhaseDistance awpd_from_phase(const MatrixXd& a, const MatrixXd& b, const StftConfig& cfg) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("phase spectra have different shapes");
  PhaseDistance out;
  const MatrixXd diff = a - b;
  out.instantaneous = mean_column_rms(anti_wrapped(diff));
  if (diff.rows() > 1) {
    const MatrixXd df = diff.bottomRows(diff.rows() - 1) - diff.topRows(diff.rows() - 1);
    out.group_delay = mean_column_rms(anti_wrapped(df));
  }
  if (diff.cols() > 1) {
    const MatrixXd dt = diff.rightCols(diff.cols() - 1) - diff.leftCols(diff.cols() - 1);
    out.angular_frequency = mean_column_rms(anti_wrapped(dt));
  }
  const double bin_rad_per_s = 2.0 * std::numbers::pi * cfg.sample_rate() / cfg.fft_size();
  out.group_delay_seconds = out.group_delay / bin_rad_per_s;
  out.angular_frequency_rad_per_s = out.angular_frequency * cfg.frame_rate();
  return out;
}

PhaseDistance awpd(const VectorXd& decoded, const VectorXd& reference, const StftConfig& cfg) {
  const auto [a, b] = align(decoded, reference, cfg);
  return awpd_from_phase(stft<double>(a, cfg).phase, stft<double>(b, cfg).phase, cfg);
}

double real_time_factor(double processing_seconds, double audio_seconds) {
  if (!(audio_seconds > 0)) throw ValidationError("audio duration must be positive");
  if (!(processing_seconds >= 0)) throw ValidationError("processing time must be non-negative");
  return processing_seconds / audio_seconds;
}

double measure_rtf(const std::function<void()>& run, double audio_seconds, int warmup, int repeats) {
  if (repeats < 1) throw ValidationError("at least one timed run is required");
  for (int i = 0; i < warmup; ++i) run();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) run();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return real_time_factor(elapsed / repeats, audio_seconds);
}

UtteranceMetrics evaluate_pair(const std::string& name, const VectorXd& decoded, const VectorXd& reference,
                               int sample_rate) {
  const StftConfig cfg = metric_stft(sample_rate);
  UtteranceMetrics m;
  m.name = name;
  m.seconds = double(std::min(decoded.size(), reference.size())) / sample_rate;
  m.lsd_db = lsd(decoded, reference, cfg);
  m.mcd_db = mcd(decoded, reference, cfg);
  m.awpd = awpd(decoded, reference, cfg);
  return m;
}

void MetricReport::summarize() {
  lsd_db = mcd_db = 0;
  awpd = {};
  rtf = -1;
  if (utterances.empty()) return;
  const double n = double(utterances.size());
  double timed = 0, duration = 0;
  bool all_timed = true;
  for (const auto& u : utterances) {
    lsd_db += u.lsd_db / n;
    mcd_db += u.mcd_db / n;
    awpd.instantaneous += u.awpd.instantaneous / n;
    awpd.group_delay += u.awpd.group_delay / n;
    awpd.angular_frequency += u.awpd.angular_frequency / n;
    awpd.group_delay_seconds += u.awpd.group_delay_seconds / n;
    awpd.angular_frequency_rad_per_s += u.awpd.angular_frequency_rad_per_s / n;
    all_timed = all_timed && u.rtf >= 0;
    timed += u.rtf * u.seconds;
    duration += u.seconds;
  }
  if (all_timed && duration > 0) rtf = timed / duration;
}

std::string MetricReport::text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(24) << "utterance" << std::right << std::setw(10) << "LSD(dB)" << std::setw(10)
      << "MCD(dB)" << std::setw(10) << "IP(rad)" << std::setw(10) << "GD" << std::setw(10) << "IAF" << std::setw(10)
      << "RTF" << "\n";
  auto row = [&](const std::string& name, double l, double m, const PhaseDistance& p, double r) {
    out << std::left << std::setw(24) << name << std::right << std::setw(10) << l << std::setw(10) << m
        << std::setw(10) << p.instantaneous << std::setw(10) << p.group_delay << std::setw(10)
        << p.angular_frequency << std::setw(10);
    if (r >= 0)
      out << r;
    else
      out << "-";
    out << "\n";
  };
  for (const auto& u : utterances) row(u.name, u.lsd_db, u.mcd_db, u.awpd, u.rtf);
  row("mean", lsd_db, mcd_db, awpd, rtf);
  out << "GD " << awpd.group_delay_seconds << " s, IAF " << awpd.angular_frequency_rad_per_s << " rad/s\n";
  return out.str();
}

namespace {

nlohmann::ordered_json metrics_json(double l, double m, const PhaseDistance& p, double r) {
  nlohmann::ordered_json j;
  j["lsd_db"] = l;
  j["mcd_db"] = m;
  j["awpd_ip_rad"] = p.instantaneous;
  j["awpd_gd"] = p.group_delay;
  j["awpd_iaf"] = p.angular_frequency;
  j["awpd_gd_s"] = p.group_delay_seconds;
  j["awpd_iaf_rad_per_s"] = p.angular_frequency_rad_per_s;
  if (r >= 0) j["rtf"] = r;
  return j;
}

}  // namespace

std::string MetricReport::jsonl() const {
  std::string out;
  for (const auto& u : utterances) {
    nlohmann::ordered_json j;
    j["utterance"] = u.name;
    j["seconds"] = u.seconds;
    j.update(metrics_json(u.lsd_db, u.mcd_db, u.awpd, u.rtf));
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json s;
  s["summary"] = true;
  s["utterances"] = utterances.size();
  s.update(metrics_json(lsd_db, mcd_db, awpd, rtf));
  out += s.dump() + "\n";
  return out;
}

MetricReport evaluate_directories(const std::filesystem::path& reference_dir,
                                  const std::filesystem::path& decoded_dir) {
  namespace fs = std::filesystem;
  auto list = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("directory " + dir.string() + " does not exist");
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".wav") names.insert(e.path().filename().string());
    return names;
  };
  const std::set<std::string> refs = list(reference_dir), decs = list(decoded_dir);
  if (refs != decs) {
    std::vector<std::string> only;
    std::set_symmetric_difference(refs.begin(), refs.end(), decs.begin(), decs.end(), std::back_inserter(only));
    throw ValidationError("file lists differ (e.g. " + only.front() + " is not in both directories)");
  }
  if (refs.empty()) throw EmptyInputError("no .wav files in " + reference_dir.string());
  MetricReport report;
  for (const std::string& name : refs) {
    const WavFile ref = read_wav(reference_dir / name);
    const WavFile dec = read_wav(decoded_dir / name);
    if (ref.sample_rate != dec.sample_rate)
      throw AudioFormatError(name + ": sample rates differ (" + std::to_string(ref.sample_rate) + " vs " +
                             std::to_string(dec.sample_rate) + " Hz)");
    report.utterances.push_back(evaluate_pair(name, dec.mono(), ref.mono(), ref.sample_rate));
  }
  report.summarize();
  return report;
}

}  // namespace apcodec
