#include "apcodec/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "apcodec/error.hpp"

namespace apcodec {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV IO assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T load(const std::string& bytes, std::size_t pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void store(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

}  // namespace

const Eigen::VectorXd& WavFile::mono() const {
  if (channels != 1)
    throw AudioFormatError("expected mono audio, got " + std::to_string(channels) + " channels");
  return samples;
}

WavFile parse_wav(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw AudioFormatError("not a RIFF/WAVE file");

  WavFile wav;
  int bits = 0;
  std::uint16_t tag = 0;
  bool have_format = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    std::size_t size = load<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "data" && (size == 0xFFFFFFFFu || body + size > bytes.size())) {
      // Streamed writers leave the size open; anything else is a cut-off file.
      if (size != 0xFFFFFFFFu) throw AudioFormatError("WAV data chunk is truncated");
      size = bytes.size() - body;
    }
    if (body + size > bytes.size()) throw AudioFormatError("WAV chunk '" + id + "' is truncated");

    if (id == "fmt ") {
      if (size < 16) throw AudioFormatError("WAV format chunk is too short");
      tag = load<std::uint16_t>(bytes, body);
      wav.channels = load<std::uint16_t>(bytes, body + 2);
      wav.sample_rate = int(load<std::uint32_t>(bytes, body + 4));
      bits = load<std::uint16_t>(bytes, body + 14);
      if (tag == kFormatExtensible) {
        if (size < 40) throw AudioFormatError("WAV extensible format chunk is too short");
        tag = load<std::uint16_t>(bytes, body + 24);
      }
      have_format = true;
    } else if (id == "data") {
      if (!have_format) throw AudioFormatError("WAV data chunk precedes the format chunk");
      if (wav.channels < 1) throw AudioFormatError("WAV file declares no channels");
      if (wav.sample_rate < 1) throw AudioFormatError("WAV file declares no sample rate");
      if (tag == kFormatPcm && bits == 16) {
        wav.format = SampleFormat::pcm16;
        const std::size_t n = size / 2;
        wav.samples.resize(Eigen::Index(n));
        for (std::size_t i = 0; i < n; ++i) wav.samples[Eigen::Index(i)] = load<std::int16_t>(bytes, body + 2 * i) / 32768.0;
      } else if (tag == kFormatFloat && bits == 32) {
        wav.format = SampleFormat::float32;
        const std::size_t n = size / 4;
        wav.samples.resize(Eigen::Index(n));
        for (std::size_t i = 0; i < n; ++i) {
          const float v = load<float>(bytes, body + 4 * i);
          if (!std::isfinite(v)) throw AudioFormatError("WAV file contains non-finite samples");
          wav.samples[Eigen::Index(i)] = v;
        }
      } else {
        throw AudioFormatError("unsupported WAV encoding (format " + std::to_string(tag) + ", " +
                               std::to_string(bits) + " bits); use 16-bit PCM or 32-bit float");
      }
      if (wav.samples.size() % wav.channels != 0) throw AudioFormatError("WAV data ends mid-frame");
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw AudioFormatError(have_format ? "WAV file has no data chunk" : "WAV file has no format chunk");
}

std::string serialize_wav(const WavFile& wav) {
  if (wav.channels < 1 || wav.sample_rate < 1) throw ValidationError("WAV needs a channel count and sample rate");
  if (wav.samples.size() % wav.channels != 0) throw ValidationError("sample count is not a multiple of the channel count");
  const bool pcm = wav.format == SampleFormat::pcm16;
  const std::uint16_t width = pcm ? 2 : 4;
  const std::uint32_t data_bytes = std::uint32_t(wav.samples.size()) * width;

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  store<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  store<std::uint32_t>(out, 16);
  store<std::uint16_t>(out, pcm ? kFormatPcm : kFormatFloat);
  store<std::uint16_t>(out, std::uint16_t(wav.channels));
  store<std::uint32_t>(out, std::uint32_t(wav.sample_rate));
  store<std::uint32_t>(out, std::uint32_t(wav.sample_rate) * wav.channels * width);
  store<std::uint16_t>(out, std::uint16_t(wav.channels * width));
  store<std::uint16_t>(out, std::uint16_t(8 * width));
  out += "data";
  store<std::uint32_t>(out, data_bytes);
  for (Eigen::Index i = 0; i < wav.samples.size(); ++i) {
    const double v = wav.samples[i];
    if (pcm)
      store<std::int16_t>(out, std::int16_t(std::clamp(std::lround(v * 32768.0), -32768L, 32767L)));
    else
      store<float>(out, float(v));
  }
  return out;
}

WavFile read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_wav(buf.str());
  } catch (const AudioFormatError& e) {
    throw AudioFormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const WavFile& wav) {
  const std::string bytes = serialize_wav(wav);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

WavFile mono_wav(const Eigen::VectorXd& samples, int sample_rate, SampleFormat format) {
  WavFile w;
  w.samples = samples;
  w.sample_rate = sample_rate;
  w.channels = 1;
  w.format = format;
  return w;
}

}  // namespace apcodec
