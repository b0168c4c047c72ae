#include "apcodec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "apcodec/nn/signal.hpp"
#include "apcodec/wav.hpp"
#include "json.hpp"

namespace apcodec {

using nn::Matrix;
using nn::Var;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate(const CodecConfig& codec) const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(batch_size >= 1, "batch_size must be >= 1");
  require(steps >= 1, "steps must be >= 1");
  require(segment >= 1 && segment % codec.hop() == 0,
          "segment must be a positive multiple of " + std::to_string(codec.hop()) + " samples");
  require(segment >= 2 * codec.stft.frame_length(),
          "segment must cover the largest discriminator window (" + std::to_string(2 * codec.stft.frame_length()) +
              " samples)");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0, 1]");
  require(weight_decay >= 0 && std::isfinite(weight_decay), "weight_decay must be non-negative");
  require(mel_bands >= 1, "mel_bands must be >= 1");
  require(kmeans_iterations >= 0, "kmeans_iterations must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
  weights.validate();
  discriminator.validate();
}

namespace {

json weights_to_json(const LossWeights& w) {
  json j;
  j["phase"] = w.phase;
  j["real_imag"] = w.real_imag;
  j["complex"] = w.complex;
  j["mel"] = w.mel;
  j["spectral"] = w.spectral;
  j["quantization"] = w.quantization;
  j["resolution"] = w.resolution;
  j["distillation"] = w.distillation;
  return j;
}

[[noreturn]] void bad_key(const std::string& where, const std::string& key) {
  throw ConfigError(where + ": unknown key '" + key + "'");
}

double number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("train config: '" + key + "' must be a number");
  return v.get<double>();
}

long integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("train config: '" + key + "' must be an integer");
  return v.get<long>();
}

std::vector<int> int_list(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("train config: '" + key + "' must be an array of integers");
  std::vector<int> out;
  for (const auto& e : v) out.push_back(int(integer(e, key)));
  return out;
}

LossWeights weights_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config: 'weights' must be an object");
  LossWeights w;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    double* target = k == "phase"          ? &w.phase
                     : k == "real_imag"    ? &w.real_imag
                     : k == "complex"      ? &w.complex
                     : k == "mel"          ? &w.mel
                     : k == "spectral"     ? &w.spectral
                     : k == "quantization" ? &w.quantization
                     : k == "resolution"   ? &w.resolution
                     : k == "distillation" ? &w.distillation
                                           : nullptr;
    if (!target) bad_key("train config weights", k);
    *target = number(*it, k);
  }
  return w;
}

DiscriminatorConfig discriminator_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config: 'discriminator' must be an object");
  DiscriminatorConfig d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "periods")
      d.periods = int_list(*it, k);
    else if (k == "period_channels")
      d.period_channels = int_list(*it, k);
    else if (k == "resolution_channels")
      d.resolution_channels = int(integer(*it, k));
    else if (k == "slope")
      d.slope = number(*it, k);
    else
      bad_key("train config discriminator", k);
  }
  return d;
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["batch_size"] = batch_size;
  j["segment"] = segment;
  j["steps"] = steps;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["learning_rate"] = learning_rate;
  j["lr_decay"] = lr_decay;
  j["weight_decay"] = weight_decay;
  j["weights"] = weights_to_json(weights);
  j["discriminator"] = {{"periods", discriminator.periods},
                        {"period_channels", discriminator.period_channels},
                        {"resolution_channels", discriminator.resolution_channels},
                        {"slope", discriminator.slope}};
  j["mel_bands"] = mel_bands;
  j["kmeans_iterations"] = kmeans_iterations;
  j["seed"] = seed;
  j["teacher"] = teacher;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = *it;
    if (k == "batch_size") c.batch_size = int(integer(v, k));
    else if (k == "segment") c.segment = int(integer(v, k));
    else if (k == "steps") c.steps = integer(v, k);
    else if (k == "beta1") c.beta1 = number(v, k);
    else if (k == "beta2") c.beta2 = number(v, k);
    else if (k == "learning_rate") c.learning_rate = number(v, k);
    else if (k == "lr_decay") c.lr_decay = number(v, k);
    else if (k == "weight_decay") c.weight_decay = number(v, k);
    else if (k == "weights") c.weights = weights_from_json(v);
    else if (k == "discriminator") c.discriminator = discriminator_from_json(v);
    else if (k == "mel_bands") c.mel_bands = int(integer(v, k));
    else if (k == "kmeans_iterations") c.kmeans_iterations = int(integer(v, k));
    else if (k == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("train config: 'seed' must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (k == "teacher") {
      if (!v.is_string()) throw ConfigError("train config: 'teacher' must be a string");
      c.teacher = v.get<std::string>();
    } else if (k == "checkpoint_every") c.checkpoint_every = integer(v, k);
    else bad_key("train config", k);
  }
  return c;
}

std::string StepReport::to_json() const {
  json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["learning_rate"] = learning_rate;
  j["amplitude"] = amplitude;
  j["instantaneous_phase"] = instantaneous_phase;
  j["group_delay"] = group_delay;
  j["angular_frequency"] = angular_frequency;
  j["phase"] = phase;
  j["real_imag"] = real_imag;
  j["consistency"] = consistency;
  j["complex"] = complex;
  j["mel"] = mel;
  j["spectral"] = spectral;
  j["quantization"] = quantization;
  j["generator_gan"] = generator_gan;
  j["distillation"] = distillation;
  j["generator_total"] = generator_total;
  j["discriminator"] = discriminator;
  j["usage_entropy"] = usage_entropy;
  j["reseeded"] = reseeded;
  j["seconds"] = seconds;
  return j.dump();
}

Eigen::VectorXd random_segment(const Eigen::VectorXd& clip, int length, std::mt19937_64& rng) {
  if (length < 1) throw ValidationError("segment length must be positive");
  if (clip.size() <= length) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(length);
    out.head(clip.size()) = clip;
    return out;
  }
  std::uniform_int_distribution<Eigen::Index> offset(0, clip.size() - length);
  return clip.segment(offset(rng), length);
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

nn::AdamWOptions adam_options(const TrainConfig& c) {
  nn::AdamWOptions o;
  o.learning_rate = c.learning_rate;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.weight_decay = c.weight_decay;
  return o;
}

CodecModel checked_model(const CodecConfig& codec, const TrainConfig& config) {
  codec.validate();
  config.validate(codec);
  return CodecModel(codec, config.seed);
}

/// Side-by-side concatenation of per-segment quantiser traces.
RvqTrace<double> merge_traces(const std::vector<const RvqTrace<double>*>& traces) {
  RvqTrace<double> out;
  const RvqTrace<double>& first = *traces.front();
  Eigen::Index frames = 0;
  for (const auto* t : traces) frames += t->tokens.cols();
  out.tokens.resize(first.tokens.rows(), frames);
  out.inputs.assign(first.inputs.size(), Matrix(first.quantized.rows(), frames));
  Eigen::Index col = 0;
  for (const auto* t : traces) {
    const Eigen::Index n = t->tokens.cols();
    out.tokens.middleCols(col, n) = t->tokens;
    for (std::size_t q = 0; q < t->inputs.size(); ++q) out.inputs[q].middleCols(col, n) = t->inputs[q];
    col += n;
  }
  return out;
}

void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw NonFiniteError(term, "loss is not finite; parameters left unchanged");
}

}  // namespace

Trainer::Trainer(const CodecConfig& codec, const TrainConfig& config) : Trainer(checked_model(codec, config), config) {}

Trainer::Trainer(CodecModel model, const TrainConfig& config)
    : model_(std::move(model)),
      config_(config),
      analysis_(model_.config().analysis()),
      mel_filterbank_(mel_filterbank<double>(config.mel_bands, model_.config().analysis())),
      discriminators_(std::make_unique<DiscriminatorBank>(model_.config().stft, config.discriminator, config.seed + 1)),
      generator_opt_(model_.parameters(), adam_options(config)),
      discriminator_opt_(discriminators_->parameters(), adam_options(config)),
      rng_(config.seed + 2) {}

void Trainer::set_teacher(std::shared_ptr<const CodecModel> teacher) {
  if (!teacher) {
    teacher_.reset();
    return;
  }
  if (teacher->config().causal) throw ModeError("the distillation teacher must be the non-causal model");
  if (!model_.config().causal) throw ModeError("distillation trains a causal student");
  if (teacher->config().stft != model_.config().stft)
    throw ConfigError("teacher and student use different STFT settings");
  check_distill_compatible(*teacher, model_);
  teacher_ = std::move(teacher);
}

void Trainer::initialize_codebooks(std::span<const Eigen::VectorXd> clips) {
  std::vector<Matrix> codes;
  Eigen::Index frames = 0;
  for (const Eigen::VectorXd& clip : clips) {
    const Eigen::VectorXd x = model_.trim(clip);
    if (x.size() == 0) continue;
    codes.push_back(model_.encode(model_.analyze(x)).values);
    frames += codes.back().cols();
  }
  if (frames == 0) throw EmptyInputError("no clip is long enough to initialise the codebooks");
  Matrix samples(model_.config().code_dim, frames);
  Eigen::Index col = 0;
  for (const Matrix& c : codes) {
    samples.middleCols(col, c.cols()) = c;
    col += c.cols();
  }
  model_.quantizer().kmeans_init(samples, rng_, config_.kmeans_iterations);
  codebooks_initialized_ = true;
}

StepReport Trainer::step(std::span<const Eigen::VectorXd> batch) {
  const auto started = std::chrono::steady_clock::now();
  if (batch.empty()) throw EmptyInputError("training batch is empty");
  const Eigen::Index length = batch.front().size();
  for (const Eigen::VectorXd& x : batch)
    if (x.size() != length) throw ValidationError("training segments must share one length");
  if (length % model_.config().hop() != 0 || length < 2 * model_.config().stft.frame_length())
    throw ValidationError("segment length " + std::to_string(length) + " is not usable for training");
  if (!codebooks_initialized_) initialize_codebooks(batch);

  const LossWeights& w = config_.weights;
  const double inv_batch = 1.0 / double(batch.size());

  // Generator forward pass, kept alive for both updates.
  struct Item {
    Var target_wave;
    Var decoded_wave;
    ForwardPass pass;
    PhaseLosses phase;
    ComplexLosses complex;
    Var amplitude, mel, spectral, distillation;
  };
  std::vector<Item> items;
  items.reserve(batch.size());
  for (const Eigen::VectorXd& x : batch) {
    Item it;
    const ComplexSpectrum<double> target = stft_complex<double>(x, analysis_);
    const SpectralFrames<double> frames = amp_phase_from_complex(target);
    nn::TapList student_taps;
    it.pass = model_.forward(frames, teacher_ ? &student_taps : nullptr);
    const DecodedFrames& d = it.pass.decoded;
    const auto [re, im] = complex_from_amp_phase(d.log_amplitude, d.phase);
    const Var parts[] = {re, im};
    it.decoded_wave = nn::istft(nn::concat_rows(parts), analysis_);
    it.target_wave = nn::constant(x.transpose());

    it.amplitude = amplitude_loss(d.log_amplitude, nn::constant(frames.log_amplitude));
    it.phase = phase_loss(d.phase, nn::constant(frames.phase));
    it.complex = complex_spectrum_loss(re, im, nn::constant(target.real), nn::constant(target.imag), analysis_,
                                       w.real_imag);
    it.mel = mel_loss(it.decoded_wave, it.target_wave, analysis_, mel_filterbank_);
    it.spectral = spectral_level_loss({it.amplitude, it.phase.total, it.complex.total, it.mel}, w);
    if (teacher_) {
      nn::TapList teacher_taps;
      {
        nn::NoGradGuard frozen;
        teacher_->forward(teacher_->analyze(x), &teacher_taps);
      }
      it.distillation = kd_loss(teacher_taps, student_taps);
    }
    items.push_back(std::move(it));
  }

  // Discriminator update on detached outputs.
  DiscriminatorBank& bank = *discriminators_;
  std::vector<Var> d_terms;
  for (const Item& it : items)
    d_terms.push_back(discriminator_gan_loss(bank(it.target_wave), bank(nn::detach(it.decoded_wave)), w.resolution));
  const Var d_loss = nn::sum_all(d_terms) * inv_batch;
  require_finite(d_loss.item(), "discriminator");
  bank.parameters().zero_grad();
  nn::backward(d_loss);
  discriminator_opt_.step();

  // Generator update against the refreshed discriminators, whose parameters
  // are frozen for this pass.
  bank.parameters().set_requires_grad(false);
  std::vector<Var> g_terms;
  StepReport report;
  try {
    for (Item& it : items) {
      DiscriminatorOutput real;
      {
        nn::NoGradGuard no_grad;
        real = bank(it.target_wave);
      }
      const Var gan = generator_gan_loss(real, bank(it.decoded_wave), w.resolution);
      Var total = it.spectral * w.spectral + it.pass.quantized.loss * w.quantization + gan;
      if (teacher_) total = total + it.distillation * w.distillation;
      g_terms.push_back(total);

      report.amplitude += it.amplitude.item() * inv_batch;
      report.instantaneous_phase += it.phase.instantaneous.item() * inv_batch;
      report.group_delay += it.phase.group_delay.item() * inv_batch;
      report.angular_frequency += it.phase.angular_frequency.item() * inv_batch;
      report.phase += it.phase.total.item() * inv_batch;
      report.real_imag += it.complex.real_imag.item() * inv_batch;
      report.consistency += it.complex.consistency.item() * inv_batch;
      report.complex += it.complex.total.item() * inv_batch;
      report.mel += it.mel.item() * inv_batch;
      report.spectral += it.spectral.item() * inv_batch;
      report.quantization += it.pass.quantized.loss.item() * inv_batch;
      report.generator_gan += gan.item() * inv_batch;
      if (teacher_) report.distillation += it.distillation.item() * inv_batch;
    }
  } catch (...) {
    bank.parameters().set_requires_grad(true);
    throw;
  }
  bank.parameters().set_requires_grad(true);
  const Var g_loss = nn::sum_all(g_terms) * inv_batch;
  report.generator_total = g_loss.item();
  report.discriminator = d_loss.item();
  require_finite(report.generator_total, "generator");
  model_.parameters().zero_grad();
  nn::backward(g_loss);
  generator_opt_.step();

  std::vector<const RvqTrace<double>*> traces;
  for (const Item& it : items) traces.push_back(&it.pass.quantized.trace);
  report.reseeded = model_.quantizer().update_usage(merge_traces(traces), rng_);

  ++step_;
  report.step = step_;
  report.epoch = epoch_;
  report.learning_rate = generator_opt_.learning_rate();
  report.usage_entropy = model_.quantizer().usage_entropy();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void Trainer::end_epoch() {
  ++epoch_;
  const double lr = config_.learning_rate * std::pow(config_.lr_decay, double(epoch_));
  generator_opt_.set_learning_rate(lr);
  discriminator_opt_.set_learning_rate(lr);
}

nn::Checkpoint Trainer::checkpoint() const {
  nn::Checkpoint ckpt;
  json j;
  j["codec"] = json::parse(model_.config().to_json());
  j["train"] = json::parse(config_.to_json());
  std::ostringstream rng_state;
  rng_state << rng_;
  j["state"] = {{"step", step_},
                {"epoch", epoch_},
                {"codebooks_initialized", codebooks_initialized_},
                {"rng", rng_state.str()}};
  ckpt.config = j.dump(2);
  export_model(model_, ckpt);
  nn::export_parameters(discriminators_->parameters(), "", ckpt);
  generator_opt_.export_state("optim.generator.", ckpt);
  discriminator_opt_.export_state("optim.discriminator.", ckpt);
  return ckpt;
}

Trainer Trainer::from_checkpoint(const nn::Checkpoint& ckpt, const TrainConfig* override) {
  json j;
  try {
    j = json::parse(ckpt.config);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!j.contains("train") || !j.contains("state")) throw CheckpointError("checkpoint holds no training state");
  const CodecConfig codec = checkpoint_codec_config(ckpt);
  const TrainConfig config = override ? *override : TrainConfig::from_json(j["train"].dump());
  Trainer t(codec, config);
  import_model(t.model_, ckpt);
  nn::import_parameters(t.discriminators_->parameters(), "", ckpt);
  t.generator_opt_.import_state("optim.generator.", ckpt);
  t.discriminator_opt_.import_state("optim.discriminator.", ckpt);
  try {
    const json& s = j["state"];
    t.step_ = s.at("step").get<long>();
    t.epoch_ = s.at("epoch").get<long>();
    t.codebooks_initialized_ = s.at("codebooks_initialized").get<bool>();
    std::istringstream rng_state(s.at("rng").get<std::string>());
    rng_state >> t.rng_;
    if (!rng_state) throw CheckpointError("checkpoint RNG state is corrupt");
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint training state is incomplete: ") + e.what());
  }
  const double lr = config.learning_rate * std::pow(config.lr_decay, double(t.epoch_));
  t.generator_opt_.set_learning_rate(lr);
  t.discriminator_opt_.set_learning_rate(lr);
  return t;
}

// ---------------------------------------------------------------------------
// Dataset loop

namespace {

struct Dataset {
  std::vector<Eigen::VectorXd> clips;
  int skipped = 0;
};

Dataset load_dataset(const std::filesystem::path& dir, int sample_rate) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Dataset data;
  for (const fs::path& f : files) {
    try {
      const WavFile wav = read_wav(f);
      if (wav.sample_rate != sample_rate)
        throw AudioFormatError("sample rate " + std::to_string(wav.sample_rate) + " Hz, model expects " +
                               std::to_string(sample_rate) + " Hz");
      if (wav.mono().size() == 0) throw AudioFormatError("no samples");
      data.clips.push_back(wav.mono());
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
      ++data.skipped;
    }
  }
  if (data.clips.empty()) throw EmptyInputError("no usable audio in " + dir.string());
  return data;
}

}  // namespace

TrainResult train(const std::filesystem::path& dataset, const CodecConfig& codec, const TrainConfig& config,
                  const std::filesystem::path& output, const std::function<void(const StepReport&)>& on_step,
                  const std::filesystem::path& resume) {
  namespace fs = std::filesystem;
  Trainer trainer =
      resume.empty() ? Trainer(codec, config) : Trainer::from_checkpoint(nn::read_checkpoint(resume), &config);
  if (!resume.empty() && !(trainer.model().config() == codec))
    throw ConfigError("resume checkpoint was trained with a different codec config");
  const TrainConfig& cfg = trainer.config();
  if (!cfg.teacher.empty()) trainer.set_teacher(std::make_shared<const CodecModel>(load_model(cfg.teacher)));

  const Dataset data = load_dataset(dataset, codec.stft.sample_rate());
  fs::create_directories(output);
  std::ofstream log(output / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (output / "train_log.jsonl").string());

  TrainResult result;
  result.checkpoint = output / "latest.ckpt";
  result.skipped_files = data.skipped;
  if (!trainer.codebooks_initialized()) {
    const std::size_t n = std::min<std::size_t>(data.clips.size(), std::size_t(cfg.batch_size));
    trainer.initialize_codebooks(std::span(data.clips).first(n));
  }

  std::vector<std::size_t> order(data.clips.size());
  while (trainer.steps_done() < cfg.steps) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), trainer.rng());
    std::size_t start = 0;
    for (; start < order.size() && trainer.steps_done() < cfg.steps; start += std::size_t(cfg.batch_size)) {
      std::vector<Eigen::VectorXd> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + std::size_t(cfg.batch_size)); ++i)
        batch.push_back(random_segment(data.clips[order[i]], cfg.segment, trainer.rng()));
      StepReport report;
      try {
        report = trainer.step(batch);
      } catch (const NonFiniteError&) {
        nn::write_checkpoint(output / "diverged.ckpt", trainer.checkpoint());
        throw;
      }
      log << report.to_json() << "\n";
      if (on_step) on_step(report);
      if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0)
        nn::write_checkpoint(result.checkpoint, trainer.checkpoint());
    }
    // Only a completed pass counts as an epoch.
    if (start >= order.size()) trainer.end_epoch();
  }
  nn::write_checkpoint(result.checkpoint, trainer.checkpoint());
  result.steps = trainer.steps_done();
  result.epochs = trainer.epochs_done();
  return result;
}

}  // namespace apcodec
