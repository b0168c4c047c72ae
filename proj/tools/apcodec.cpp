// apcodec: encode, decode, stream, train and evaluate from the command line.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "apcodec/bitstream.hpp"
#include "apcodec/codec.hpp"
#include "apcodec/eval.hpp"
#include "apcodec/stream.hpp"
#include "apcodec/trainer.hpp"
#include "apcodec/wav.hpp"
#include "json.hpp"

namespace {

using namespace apcodec;
namespace fs = std::filesystem;

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kAudioFormat = 4,
  kSampleRate = 5,
  kCheckpoint = 6,
  kContainer = 7,
  kMode = 8,
  kConfig = 9,
  kDiverged = 10,
  kInput = 11,
  kMismatch = 12,
};

constexpr const char* kExitCodes =
    "Exit codes: 0 ok, 1 internal error, 2 usage, 3 file I/O, 4 unsupported audio (stereo, encoding),\n"
    "5 sample-rate mismatch, 6 unreadable checkpoint, 7 bad bitstream container, 8 wrong model mode,\n"
    "9 invalid config, 10 training diverged, 11 invalid input, 12 stream/batch mismatch.";

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char* v = std::getenv("APCODEC_LOG");
  if (!v) return Verbosity::info;
  const std::string s(v);
  if (s == "quiet" || s == "error") return Verbosity::quiet;
  if (s == "debug") return Verbosity::debug;
  return Verbosity::info;
}

void info(const std::string& line) {
  if (verbosity() != Verbosity::quiet) std::cout << line << "\n";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

CodecModel open_model(const fs::path& path) {
  try {
    return load_model(path);
  } catch (const IoError& e) {
    throw Failure(kCheckpoint, e.what());
  } catch (const CheckpointError& e) {
    throw Failure(kCheckpoint, e.what());
  } catch (const ConfigError& e) {
    throw Failure(kCheckpoint, std::string("checkpoint config: ") + e.what());
  }
}

/// Mono samples at the model's rate.
Eigen::VectorXd open_audio(const fs::path& path, int sample_rate) {
  const WavFile wav = read_wav(path);
  if (wav.sample_rate != sample_rate)
    throw Failure(kSampleRate, path.string() + " is " + std::to_string(wav.sample_rate) + " Hz but the model runs at " +
                                   std::to_string(sample_rate) + " Hz; resample it with an external tool");
  const Eigen::VectorXd& x = wav.mono();
  if (x.size() == 0) throw Failure(kInput, path.string() + " contains no samples");
  return x;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

int cmd_init(const fs::path& config, const std::string& preset, int sample_rate, int stages, bool causal,
             std::uint64_t seed, const fs::path& output) {
  CodecConfig c;
  if (!config.empty()) {
    c = CodecConfig::from_json(read_file(config));
  } else if (preset == "tiny") {
    c = CodecConfig::tiny();
  } else {
    c = CodecConfig::reference(sample_rate, stages);
  }
  if (causal) c.causal = true;
  c.validate();
  const CodecModel model(c, seed);
  save_model(output, model);
  info("wrote " + output.string() + " (" + std::to_string(model.parameters().scalar_count()) + " parameters, " +
       fixed(c.bitrate_kbps(), 3) + " kbps, " + (c.causal ? "causal" : "non-causal") + ")");
  return kOk;
}

int cmd_encode(const fs::path& input, const fs::path& model_path, const fs::path& output) {
  const CodecModel model = open_model(model_path);
  const Eigen::VectorXd x = model.trim(open_audio(input, model.config().stft.sample_rate()));
  if (x.size() == 0)
    throw Failure(kInput, input.string() + " is shorter than one code frame (" + std::to_string(model.config().hop()) +
                              " samples)");
  const TokenMatrix tokens = model.tokenize(x);
  const StreamHeader header = model.stream_header(std::uint32_t(tokens.cols()));
  const std::vector<std::uint8_t> bytes = pack_tokens(header, tokens);
  write_file(output, std::string(bytes.begin(), bytes.end()));
  const double seconds = double(x.size()) / model.config().stft.sample_rate();
  const std::size_t payload_bits = std::size_t(tokens.size()) * std::size_t(bits_per_index(header.codebook_size));
  info("frames " + std::to_string(tokens.cols()) + ", payload " + std::to_string(payload_bits) + " bits (" +
       std::to_string(payload_bytes(header)) + " bytes) + " + std::to_string(kBitstreamHeaderBytes) +
       " header bytes");
  info("bitrate " + fixed(model.config().bitrate_kbps(), 3) + " kbps (" + fixed(payload_bits / seconds / 1000.0, 3) +
       " kbps achieved over " + fixed(seconds, 3) + " s)");
  return kOk;
}

int cmd_decode(const fs::path& input, const fs::path& model_path, const fs::path& output, bool as_float) {
  const CodecModel model = open_model(model_path);
  const std::string bytes = read_file(input);
  const UnpackedStream stream =
      unpack_tokens(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  model.check_header(stream.header);
  const Eigen::VectorXd y = stream.tokens.cols() == 0 ? Eigen::VectorXd() : model.detokenize(stream.tokens);
  write_wav(output, mono_wav(y, model.config().stft.sample_rate(), as_float ? SampleFormat::float32 : SampleFormat::pcm16));
  info("decoded " + std::to_string(stream.tokens.cols()) + " frames to " + std::to_string(y.size()) + " samples");
  return kOk;
}

int cmd_stream(const fs::path& input, const fs::path& model_path, int chunk, int probe_stride,
               const fs::path& output, bool as_float) {
  if (chunk < 1) throw Failure(kUsage, "--chunk must be >= 1");
  const CodecModel model = open_model(model_path);
  if (!model.config().causal) throw ModeError("streaming needs a causal model; this checkpoint is non-causal");
  const int rate = model.config().stft.sample_rate();
  const Eigen::VectorXd x = model.trim(open_audio(input, rate));
  if (x.size() == 0) throw Failure(kInput, input.string() + " is shorter than one code frame");

  StreamCodec codec(model);
  std::vector<double> streamed;
  streamed.reserve(std::size_t(x.size() + codec.delay()));
  for (Eigen::Index start = 0; start < x.size(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, x.size() - start);
    const Eigen::VectorXd y = codec.push(std::span(x.data() + start, std::size_t(n)));
    streamed.insert(streamed.end(), y.data(), y.data() + y.size());
  }
  const Eigen::VectorXd tail = codec.flush();
  streamed.insert(streamed.end(), tail.data(), tail.data() + tail.size());

  const Eigen::VectorXd batch = model.resynthesize(x);
  const Eigen::Index delay = codec.delay();
  const Eigen::VectorXd aligned = Eigen::Map<const Eigen::VectorXd>(streamed.data() + delay, batch.size());
  const double max_error = (aligned - batch).cwiseAbs().maxCoeff();

  const Eigen::Index probe_len = std::min<Eigen::Index>(x.size(), 3 * model.config().hop());
  const LatencyReport lat = measure_latency(model, x.head(probe_len), probe_stride);
  info("streamed " + std::to_string(x.size()) + " samples in chunks of " + std::to_string(chunk) +
       "; max |stream - batch| = " + fixed(max_error, 9));
  info("algorithmic latency " + std::to_string(lat.probe_latency) + " samples (" +
       fixed(1000.0 * double(lat.probe_latency) / rate, 2) + " ms), " + std::to_string(lat.violations) +
       " causality violations over " + std::to_string(lat.probes) + " probes");
  if (!output.empty()) write_wav(output, mono_wav(aligned, rate, as_float ? SampleFormat::float32 : SampleFormat::pcm16));
  if (max_error > 1e-5) throw Failure(kMismatch, "streamed output deviates from batch inference");
  if (lat.violations > 0) throw Failure(kMismatch, "causality probe found output preceding its input");
  return kOk;
}

int cmd_train(const fs::path& config_path, const fs::path& data, const fs::path& output, const fs::path& resume,
              const std::optional<std::uint64_t>& seed, const std::optional<long>& steps) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(config_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object with 'codec' and 'train' sections");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "codec" && it.key() != "train") throw ConfigError("config: unknown section '" + it.key() + "'");
  const CodecConfig codec = j.contains("codec") ? CodecConfig::from_json(j["codec"].dump()) : CodecConfig::tiny();
  TrainConfig train_cfg = j.contains("train") ? TrainConfig::from_json(j["train"].dump()) : TrainConfig{};
  if (seed) train_cfg.seed = *seed;
  if (steps) train_cfg.steps = *steps;
  train_cfg.validate(codec);

  const bool debug = verbosity() == Verbosity::debug;
  const long every = debug ? 1 : std::max<long>(1, train_cfg.steps / 20);
  const TrainResult r = train(
      data, codec, train_cfg, output,
      [&](const StepReport& s) {
        if (s.step % every == 0 || s.step == train_cfg.steps)
          info("step " + std::to_string(s.step) + " epoch " + std::to_string(s.epoch) + " amp " +
               fixed(s.amplitude, 4) + " phase " + fixed(s.phase, 4) + " mel " + fixed(s.mel, 4) + " gen " +
               fixed(s.generator_total, 4) + " disc " + fixed(s.discriminator, 4) + " (" + fixed(s.seconds, 2) + " s)");
      },
      resume);
  info("trained " + std::to_string(r.steps) + " steps over " + std::to_string(r.epochs) + " epochs; " +
       std::to_string(r.skipped_files) + " files skipped; checkpoint " + r.checkpoint.string());
  return kOk;
}

int cmd_eval(const fs::path& reference, const fs::path& decoded, const fs::path& model_path,
             const std::string& format, const fs::path& output) {
  MetricReport report;
  try {
    report = evaluate_directories(reference, decoded);
  } catch (const ValidationError& e) {
    throw Failure(kInput, e.what());
  }
  if (!model_path.empty()) {
    const CodecModel model = open_model(model_path);
    for (UtteranceMetrics& u : report.utterances) {
      const Eigen::VectorXd x = model.trim(open_audio(reference / u.name, model.config().stft.sample_rate()));
      if (x.size() == 0) continue;
      const double seconds = double(x.size()) / model.config().stft.sample_rate();
      u.rtf = measure_rtf([&] { (void)model.resynthesize(x); }, seconds);
    }
    report.summarize();
  }
  fs::create_directories(output);
  write_file(output / "metrics.txt", report.text());
  write_file(output / "metrics.jsonl", report.jsonl());
  std::cout << (format == "jsonl" ? report.jsonl() : report.text());
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (const auto* f = dynamic_cast<const Failure*>(&e)) return f->code();
  if (dynamic_cast<const BitstreamError*>(&e)) return kContainer;
  if (dynamic_cast<const CheckpointError*>(&e)) return kCheckpoint;
  if (dynamic_cast<const AudioFormatError*>(&e)) return kAudioFormat;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const ModeError*>(&e)) return kMode;
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const NonFiniteError*>(&e)) return kDiverged;
  if (dynamic_cast<const Error*>(&e)) return kInput;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kIo;
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural audio codec with amplitude and phase spectra"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  fs::path input, model, output, config, resume, data, reference, decoded, report_dir = ".";
  std::string preset = "reference", format = "text";
  int sample_rate = 48000, stages = 4, chunk = 320, probe_stride = 7;
  bool causal = false, as_float = false;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> train_seed;
  std::optional<long> steps;

  auto* init = app.add_subcommand("init", "Write an untrained model checkpoint");
  init->add_option("--config", config, "Codec config JSON (overrides --preset)")->check(CLI::ExistingFile);
  init->add_option("--preset", preset, "tiny or reference")->check(CLI::IsMember({"tiny", "reference"}));
  init->add_option("--sample-rate", sample_rate, "Reference preset sample rate")->check(CLI::IsMember({16000, 24000, 48000}));
  init->add_option("--stages", stages, "Reference preset quantiser stages")->check(CLI::Range(1, 64));
  init->add_flag("--causal", causal, "Build the streamable causal variant");
  init->add_option("--seed", seed, "Initialisation seed");
  init->add_option("-o,--output", output, "Checkpoint path")->required();

  auto* encode = app.add_subcommand("encode", "Encode a mono WAV file to a token bitstream (.apcs)");
  encode->add_option("input", input, "Input WAV")->required()->check(CLI::ExistingFile);
  encode->add_option("-m,--model", model, "Model checkpoint")->required();
  encode->add_option("-o,--output", output, "Output bitstream")->required();

  auto* decode = app.add_subcommand("decode", "Decode a token bitstream to a mono WAV file");
  decode->add_option("input", input, "Input bitstream")->required()->check(CLI::ExistingFile);
  decode->add_option("-m,--model", model, "Model checkpoint")->required();
  decode->add_option("-o,--output", output, "Output WAV")->required();
  decode->add_flag("--float", as_float, "Write 32-bit float samples instead of 16-bit PCM");

  auto* stream = app.add_subcommand("stream", "Run low-latency chunked inference and check it against batch inference");
  stream->add_option("input", input, "Input WAV")->required()->check(CLI::ExistingFile);
  stream->add_option("-m,--model", model, "Causal model checkpoint")->required();
  stream->add_option("--chunk", chunk, "Samples per pushed chunk")->check(CLI::PositiveNumber);
  stream->add_option("--probe-stride", probe_stride, "Input stride of the latency probe")->check(CLI::PositiveNumber);
  stream->add_option("-o,--output", output, "Optional output WAV (aligned to the input)");
  stream->add_flag("--float", as_float, "Write 32-bit float samples instead of 16-bit PCM");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of WAV files");
  train_cmd->add_option("-c,--config", config, "JSON with 'codec' and 'train' sections")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Directory of training WAV files")->required();
  train_cmd->add_option("-o,--output", output, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train_seed, "Override the config seed");
  train_cmd->add_option("--steps", steps, "Override the number of steps")->check(CLI::PositiveNumber);

  auto* eval_cmd = app.add_subcommand("eval", "Compare decoded WAV files against references");
  eval_cmd->add_option("reference", reference, "Reference directory")->required();
  eval_cmd->add_option("decoded", decoded, "Decoded directory with the same file names")->required();
  eval_cmd->add_option("-m,--model", model, "Also time this model on the references (RTF)");
  eval_cmd->add_option("--report", format, "Console format: text or jsonl")->check(CLI::IsMember({"text", "jsonl"}));
  eval_cmd->add_option("-o,--output", report_dir, "Directory for metrics.txt and metrics.jsonl (default: current)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*init) return cmd_init(config, preset, sample_rate, stages, causal, seed, output);
    if (*encode) return cmd_encode(input, model, output);
    if (*decode) return cmd_decode(input, model, output, as_float);
    if (*stream) return cmd_stream(input, model, chunk, probe_stride, output, as_float);
    if (*train_cmd) return cmd_train(config, data, output, resume, train_seed, steps);
    if (*eval_cmd) return cmd_eval(reference, decoded, model, format, report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kFailure;
}
