#include "apcodec/codec.hpp"

#include <cmath>

#include "json.hpp"

namespace apcodec {

using nn::Index;
using nn::Matrix;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

CodecConfig CodecConfig::reference(int sample_rate, int stages) {
  CodecConfig c;
  c.stft = StftConfig(320, 40, 1024, sample_rate);
  c.stages = stages;
  c.validate();
  return c;
}

CodecConfig CodecConfig::tiny() {
  CodecConfig c;
  c.channels = 64;
  c.hidden = 128;
  c.decoder_width = 128;
  c.blocks = 2;
  c.stages = 2;
  c.codebook_size = 64;
  c.stft = StftConfig(320, 40, 1024, 16000);
  c.validate();
  return c;
}

void CodecConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(channels >= 2 && channels % 2 == 0, "channels must be even and >= 2");
  require(hidden >= 1 && decoder_width >= 1, "hidden and decoder widths must be positive");
  require(code_dim >= 1 && code_dim < channels, "code_dim must satisfy 1 <= code_dim < channels");
  require(downsample >= 1, "downsample must be >= 1");
  require(blocks >= 0, "block count must be non-negative");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be odd");
  require(deconv_kernel >= downsample, "deconv_kernel must be >= downsample");
  require(causal || (deconv_kernel - downsample) % 2 == 0,
          "deconv_kernel - downsample must be even for the centred upsampler");
  require(!causal || conv_kernel <= 2 * downsample - 1,
          "causal downsampling needs conv_kernel <= 2 * downsample - 1");
  require(stages >= 1, "stages must be >= 1");
  require(codebook_size >= 2, "codebook_size must be >= 2");
}

StftConfig CodecConfig::analysis() const {
  return stft.with_framing(causal ? Framing::causal : Framing::centered);
}

double CodecConfig::bitrate_kbps() const {
  return apcodec::bitrate_kbps(stft.sample_rate(), stft.frame_shift(), downsample, stages, codebook_size);
}

std::int64_t CodecConfig::parameter_count() const {
  const std::int64_t K = channels, H = hidden, N = stft.bins(), C = code_dim, S = decoder_width;
  const std::int64_t k = conv_kernel, kd = deconv_kernel;
  // Stride-1 convolutions become feed-forward layers in the causal model.
  auto frame_conv = [&](std::int64_t in, std::int64_t out) { return out * in * (causal ? 1 : k) + out; };
  const std::int64_t block = (causal ? K * K + K : K * k + K) + 2 * K + (H * K + H) + 2 * H + (K * H + K);
  const std::int64_t trunk = 2 * K + blocks * block + 2 * K;

  const std::int64_t enc_branch = frame_conv(N, K) + trunk + (K * K + K) + ((K / 2) * k * K + K / 2);
  const std::int64_t encoder = 2 * enc_branch + frame_conv(K, C);

  const std::int64_t dec_branch = (kd * K * (K / 2) + K) + trunk + (S * K + S);
  const std::int64_t decoder = frame_conv(C, K / 2) + 2 * dec_branch + frame_conv(S, N) + 2 * frame_conv(S, N);

  return encoder + decoder + std::int64_t(stages) * codebook_size * C;
}

std::string CodecConfig::to_json() const {
  nlohmann::ordered_json j;
  j["sample_rate"] = stft.sample_rate();
  j["frame_length"] = stft.frame_length();
  j["frame_shift"] = stft.frame_shift();
  j["fft_size"] = stft.fft_size();
  j["channels"] = channels;
  j["hidden"] = hidden;
  j["code_dim"] = code_dim;
  j["downsample"] = downsample;
  j["blocks"] = blocks;
  j["conv_kernel"] = conv_kernel;
  j["deconv_kernel"] = deconv_kernel;
  j["decoder_width"] = decoder_width;
  j["stages"] = stages;
  j["codebook_size"] = codebook_size;
  j["causal"] = causal;
  return j.dump(2);
}

CodecConfig CodecConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("codec config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("codec config must be a JSON object");
  CodecConfig c;
  int sample_rate = c.stft.sample_rate(), frame_length = c.stft.frame_length();
  int frame_shift = c.stft.frame_shift(), fft_size = c.stft.fft_size();
  struct Field {
    const char* key;
    int* target;
  };
  const Field fields[] = {{"sample_rate", &sample_rate},   {"frame_length", &frame_length},
                          {"frame_shift", &frame_shift},   {"fft_size", &fft_size},
                          {"channels", &c.channels},       {"hidden", &c.hidden},
                          {"code_dim", &c.code_dim},       {"downsample", &c.downsample},
                          {"blocks", &c.blocks},           {"conv_kernel", &c.conv_kernel},
                          {"deconv_kernel", &c.deconv_kernel}, {"decoder_width", &c.decoder_width},
                          {"stages", &c.stages},           {"codebook_size", &c.codebook_size}};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "causal") {
      if (!it->is_boolean()) throw ConfigError("codec config: 'causal' must be a boolean");
      c.causal = it->get<bool>();
      continue;
    }
    bool known = false;
    for (const Field& f : fields)
      if (it.key() == f.key) {
        if (!it->is_number_integer()) throw ConfigError(std::string("codec config: '") + f.key + "' must be an integer");
        *f.target = it->get<int>();
        known = true;
      }
    if (!known) throw ConfigError("codec config: unknown key '" + it.key() + "'");
  }
  c.stft = StftConfig(frame_length, frame_shift, fft_size, sample_rate);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model

namespace {

void check_finite(const std::string& layer, const Var& v) {
  if (!v.value().allFinite()) throw NonFiniteError(layer, "non-finite activation");
}

Var record(const std::string& name, const Var& v, nn::TapList* taps) {
  check_finite(name, v);
  if (taps) taps->add(name, v);
  return v;
}

// Stride-1 convolution, or a feed-forward layer of the same width in the causal model.
class FrameConv {
 public:
  FrameConv() = default;
  FrameConv(nn::ParameterStore& store, const std::string& name, Index in, Index out, Index kernel, bool causal)
      : causal_(causal) {
    if (causal)
      ff_ = nn::FeedForward(store, name, in, out);
    else
      conv_ = nn::Conv1d(store, name, nn::ConvSpec{in, out, kernel, 1, 1, false});
  }
  Var operator()(const Var& x) const { return causal_ ? ff_(x) : conv_(x); }

 private:
  bool causal_ = false;
  nn::Conv1d conv_;
  nn::FeedForward ff_;
};

// layer norm -> ConvNeXt blocks -> layer norm, shared by all four branches.
struct Trunk {
  std::string name;
  nn::LayerNorm norm_in, norm_out;
  std::vector<nn::ConvNeXtBlock> blocks;

  Trunk() = default;
  Trunk(nn::ParameterStore& store, const std::string& prefix, const CodecConfig& c) : name(prefix) {
    norm_in = nn::LayerNorm(store, prefix + ".norm_in", c.channels);
    for (int b = 0; b < c.blocks; ++b)
      blocks.emplace_back(store, prefix + ".block" + std::to_string(b), c.channels, c.hidden, c.conv_kernel,
                          c.causal);
    norm_out = nn::LayerNorm(store, prefix + ".norm_out", c.channels);
  }

  Var operator()(Var h, nn::TapList* taps) const {
    h = norm_in(h);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      h = record(name + ".block" + std::to_string(b), blocks[b](h, taps), nullptr);
    // Block outputs are tapped inside the block; only check them here.
    return norm_out(h);
  }
};

struct EncoderBranch {
  std::string name;
  FrameConv input;
  Trunk trunk;
  nn::FeedForward ff;
  nn::Conv1d down;

  EncoderBranch() = default;
  EncoderBranch(nn::ParameterStore& store, const std::string& prefix, const CodecConfig& c) : name(prefix) {
    input = FrameConv(store, prefix + ".input", c.stft.bins(), c.channels, c.conv_kernel, c.causal);
    trunk = Trunk(store, prefix, c);
    ff = nn::FeedForward(store, prefix + ".ff", c.channels, c.channels);
    down = nn::Conv1d(store, prefix + ".down",
                      nn::ConvSpec{c.channels, c.channels / 2, c.conv_kernel, c.downsample, 1, c.causal});
  }

  Var operator()(const Var& x, nn::TapList* taps) const {
    Var h = record(name + ".input", input(x), taps);
    h = trunk(h, taps);
    h = record(name + ".ff", ff(h), taps);
    return record(name + ".down", down(h), taps);
  }
};

struct DecoderBranch {
  std::string name;
  nn::ConvTranspose1d up;
  Trunk trunk;
  nn::FeedForward ff;

  DecoderBranch() = default;
  DecoderBranch(nn::ParameterStore& store, const std::string& prefix, const CodecConfig& c) : name(prefix) {
    up = nn::ConvTranspose1d(store, prefix + ".up",
                             nn::ConvSpec{c.channels / 2, c.channels, c.deconv_kernel, c.downsample, 1, c.causal});
    trunk = Trunk(store, prefix, c);
    ff = nn::FeedForward(store, prefix + ".ff", c.channels, c.decoder_width);
  }

  Var operator()(const Var& code, nn::TapList* taps) const {
    Var h = record(name + ".up", up(code), taps);
    h = trunk(h, taps);
    return record(name + ".ff", ff(h), taps);
  }
};

}  // namespace

struct CodecModel::Impl {
  CodecConfig config;
  nn::ParameterStore store;
  EncoderBranch enc_amp, enc_phase;
  FrameConv fuse;
  ResidualVQ vq;
  FrameConv expand;
  DecoderBranch dec_amp, dec_phase;
  FrameConv amp_out, real_out, imag_out;

  Impl(const CodecConfig& c, std::uint64_t seed) : config(c), store(seed) {
    c.validate();
    const Index bins = c.stft.bins();
    enc_amp = EncoderBranch(store, "encoder.amplitude", c);
    enc_phase = EncoderBranch(store, "encoder.phase", c);
    fuse = FrameConv(store, "encoder.fuse", c.channels, c.code_dim, c.conv_kernel, c.causal);
    vq = ResidualVQ(store, "quantizer", c.stages, c.codebook_size, c.code_dim);
    expand = FrameConv(store, "decoder.expand", c.code_dim, c.channels / 2, c.conv_kernel, c.causal);
    dec_amp = DecoderBranch(store, "decoder.amplitude", c);
    dec_phase = DecoderBranch(store, "decoder.phase", c);
    amp_out = FrameConv(store, "decoder.amplitude.out", c.decoder_width, bins, c.conv_kernel, c.causal);
    real_out = FrameConv(store, "decoder.phase.real", c.decoder_width, bins, c.conv_kernel, c.causal);
    imag_out = FrameConv(store, "decoder.phase.imag", c.decoder_width, bins, c.conv_kernel, c.causal);
  }
};

CodecModel::CodecModel(const CodecConfig& config, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(config, seed)) {}
CodecModel::~CodecModel() = default;
CodecModel::CodecModel(CodecModel&&) noexcept = default;
CodecModel& CodecModel::operator=(CodecModel&&) noexcept = default;

const CodecConfig& CodecModel::config() const { return impl_->config; }
nn::ParameterStore& CodecModel::parameters() { return impl_->store; }
const nn::ParameterStore& CodecModel::parameters() const { return impl_->store; }
ResidualVQ& CodecModel::quantizer() { return impl_->vq; }
const ResidualVQ& CodecModel::quantizer() const { return impl_->vq; }

Var CodecModel::encode(const Var& log_amplitude, const Var& phase, nn::TapList* taps) const {
  const CodecConfig& c = impl_->config;
  const Index bins = c.stft.bins();
  if (log_amplitude.rows() != bins || phase.rows() != bins || log_amplitude.cols() != phase.cols())
    throw ValidationError("encoder input must be two " + std::to_string(bins) + "-bin spectra of equal length");
  if (log_amplitude.cols() == 0) throw EmptyInputError("encoder input has no frames");
  if (log_amplitude.cols() % c.downsample != 0)
    throw FramingError("frame count " + std::to_string(log_amplitude.cols()) +
                       " is not a multiple of the downsampling ratio " + std::to_string(c.downsample));
  check_finite("encoder input", log_amplitude);
  check_finite("encoder input", phase);
  const Var parts[] = {impl_->enc_amp(log_amplitude, taps), impl_->enc_phase(phase, taps)};
  return record("encoder.fuse", impl_->fuse(nn::concat_rows(parts)), taps);
}

DecodedFrames CodecModel::decode(const Var& code, nn::TapList* taps) const {
  const CodecConfig& c = impl_->config;
  if (code.rows() != c.code_dim)
    throw ValidationError("code has " + std::to_string(code.rows()) + " dims, decoder expects " +
                          std::to_string(c.code_dim));
  if (code.cols() == 0) throw EmptyInputError("code has no frames");
  check_finite("decoder input", code);
  const Var h = record("decoder.expand", impl_->expand(code), taps);
  DecodedFrames out;
  out.log_amplitude = record("decoder.amplitude.out", impl_->amp_out(impl_->dec_amp(h, taps)), taps);
  const Var p = impl_->dec_phase(h, taps);
  out.real = record("decoder.phase.real", impl_->real_out(p), taps);
  out.imag = record("decoder.phase.imag", impl_->imag_out(p), taps);
  out.phase = nn::phase(out.real, out.imag);
  return out;
}

ForwardPass CodecModel::forward(const SpectralFrames<double>& input, nn::TapList* taps) const {
  ForwardPass out;
  out.code = encode(nn::constant(input.log_amplitude), nn::constant(input.phase), taps);
  out.quantized = impl_->vq.forward(out.code);
  record("quantizer", out.quantized.quantized, taps);
  out.decoded = decode(out.quantized.quantized, taps);
  return out;
}

Eigen::VectorXd CodecModel::trim(const Eigen::VectorXd& wave) const {
  const Index hop = config().hop();
  return wave.head(wave.size() / hop * hop);
}

SpectralFrames<double> CodecModel::analyze(const Eigen::VectorXd& wave) const {
  const Index hop = config().hop();
  if (wave.size() == 0) throw EmptyInputError("waveform is empty");
  if (wave.size() % hop != 0)
    throw FramingError("waveform length " + std::to_string(wave.size()) + " is not a multiple of " +
                       std::to_string(hop) + " samples");
  return stft<double>(wave, config().analysis());
}

LatentCode CodecModel::encode(const SpectralFrames<double>& frames) const {
  nn::NoGradGuard guard;
  const Var code = encode(nn::constant(frames.log_amplitude), nn::constant(frames.phase));
  return {code.value(), config().code_rate()};
}

SpectralFrames<double> CodecModel::decode(const LatentCode& code) const {
  nn::NoGradGuard guard;
  const DecodedFrames d = decode(nn::constant(code.values));
  return {d.log_amplitude.value(), d.phase.value(), config().analysis()};
}

Eigen::VectorXd CodecModel::reconstruct(const LatentCode& code) const {
  return istft(complex_from_amp_phase(decode(code)));
}

TokenMatrix CodecModel::tokenize(const Eigen::VectorXd& wave) const {
  const Eigen::VectorXd x = trim(wave);
  if (x.size() == 0)
    throw EmptyInputError("waveform shorter than one code frame (" + std::to_string(config().hop()) + " samples)");
  return impl_->vq.quantize(encode(analyze(x)).values).tokens;
}

Eigen::VectorXd CodecModel::detokenize(const TokenMatrix& tokens) const {
  if (tokens.rows() != config().stages)
    throw ValidationError("token matrix has " + std::to_string(tokens.rows()) + " stages, model has " +
                          std::to_string(config().stages));
  if (tokens.cols() == 0) return Eigen::VectorXd();
  return reconstruct({impl_->vq.dequantize(tokens), config().code_rate()});
}

Eigen::VectorXd CodecModel::resynthesize(const Eigen::VectorXd& wave, bool quantize) const {
  const Eigen::VectorXd x = trim(wave);
  if (x.size() == 0) throw EmptyInputError("waveform shorter than one code frame");
  LatentCode code = encode(analyze(x));
  if (quantize) code.values = impl_->vq.quantize(code.values).quantized;
  return reconstruct(code);
}

StreamHeader CodecModel::stream_header(std::uint32_t frames) const {
  const CodecConfig& c = config();
  StreamHeader h;
  h.sample_rate = std::uint32_t(c.stft.sample_rate());
  h.frame_shift = std::uint32_t(c.stft.frame_shift());
  h.frame_length = std::uint32_t(c.stft.frame_length());
  h.fft_size = std::uint32_t(c.stft.fft_size());
  h.downsample = std::uint32_t(c.downsample);
  h.stages = std::uint32_t(c.stages);
  h.codebook_size = std::uint32_t(c.codebook_size);
  h.code_dim = std::uint32_t(c.code_dim);
  h.frames = frames;
  return h;
}

void CodecModel::check_header(const StreamHeader& header) const {
  StreamHeader expected = stream_header(header.frames);
  if (!(expected == header))
    throw ConfigError("token stream was produced by an incompatible model configuration");
}

std::vector<TapShape> CodecModel::tap_shapes() const {
  nn::NoGradGuard guard;
  const CodecConfig& c = config();
  const Index frames = c.downsample;
  SpectralFrames<double> probe{Matrix::Zero(c.stft.bins(), frames), Matrix::Zero(c.stft.bins(), frames),
                               c.analysis()};
  nn::TapList taps;
  forward(probe, &taps);
  std::vector<TapShape> out;
  for (const auto& [name, v] : taps.taps) out.push_back({name, v.rows(), v.cols()});
  return out;
}

std::vector<std::string> CodecModel::distill_probe_points() const {
  std::vector<std::string> names;
  for (const TapShape& t : tap_shapes()) names.push_back(t.name);
  return names;
}

void check_distill_compatible(const CodecModel& teacher, const CodecModel& student) {
  const auto t = teacher.tap_shapes();
  const auto s = student.tap_shapes();
  if (t.size() != s.size())
    throw ConfigError("teacher has " + std::to_string(t.size()) + " taps, student has " + std::to_string(s.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].rows != s[i].rows || t[i].cols_per_code_frame != s[i].cols_per_code_frame)
      throw ConfigError("tap " + t[i].name + " / " + s[i].name + " shapes differ: " + std::to_string(t[i].rows) +
                        " vs " + std::to_string(s[i].rows) + " channels");
}

// ---------------------------------------------------------------------------
// Model files

void export_model(const CodecModel& model, nn::Checkpoint& ckpt) {
  nn::export_parameters(model.parameters(), "", ckpt);
  const auto& usage = model.quantizer().usage();
  for (std::size_t q = 0; q < usage.size(); ++q)
    ckpt.tensors.push_back({"quantizer.usage" + std::to_string(q), Matrix(usage[q])});
  ckpt.tensors.push_back({"quantizer.usage_updates", Matrix::Constant(1, 1, model.quantizer().usage_updates())});
}

void import_model(CodecModel& model, const nn::Checkpoint& ckpt) {
  nn::import_parameters(model.parameters(), "", ckpt);
  const nn::NamedTensor* updates = ckpt.find("quantizer.usage_updates");
  if (!updates) return;
  std::vector<Eigen::VectorXd> usage;
  for (int q = 0; q < model.quantizer().stages(); ++q) {
    const nn::NamedTensor* t = ckpt.find("quantizer.usage" + std::to_string(q));
    if (!t || t->value.cols() != 1) throw CheckpointError("checkpoint usage statistics are incomplete");
    usage.push_back(t->value.col(0));
  }
  model.quantizer().set_usage(std::move(usage), int(updates->value(0, 0)));
}

CodecConfig checkpoint_codec_config(const nn::Checkpoint& ckpt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("codec")) throw CheckpointError("checkpoint has no codec config");
  return CodecConfig::from_json(j["codec"].dump());
}

CodecModel model_from_checkpoint(const nn::Checkpoint& ckpt) {
  CodecModel model(checkpoint_codec_config(ckpt));
  import_model(model, ckpt);
  return model;
}

void save_model(const std::filesystem::path& path, const CodecModel& model) {
  nn::Checkpoint ckpt;
  nlohmann::ordered_json j;
  j["codec"] = nlohmann::ordered_json::parse(model.config().to_json());
  ckpt.config = j.dump(2);
  export_model(model, ckpt);
  nn::write_checkpoint(path, ckpt);
}

CodecModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(nn::read_checkpoint(path)); }

}  // namespace apcodec
