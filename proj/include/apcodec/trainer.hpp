#pragma once

// GAN training loop: one discriminator update followed by one generator
// update per step, AdamW on both sides with a per-epoch learning-rate decay,
// optional feature distillation from a frozen non-causal teacher.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "apcodec/codec.hpp"
#include "apcodec/discriminator.hpp"
#include "apcodec/losses.hpp"
#include "apcodec/nn/optim.hpp"

namespace apcodec {

struct TrainConfig {
  int batch_size = 1;
  int segment = 2560;  // samples per training crop
  long steps = 1000;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double learning_rate = 2e-4;
  double lr_decay = 0.999;  // applied after every pass over the file list
  double weight_decay = 0.01;
  LossWeights weights;
  DiscriminatorConfig discriminator = DiscriminatorConfig::small();
  int mel_bands = 80;
  int kmeans_iterations = 10;
  std::uint64_t seed = 0;
  std::string teacher;        // teacher model file; empty trains without distillation
  long checkpoint_every = 0;  // 0 writes only the final checkpoint

  /// Throws ConfigError when the values cannot drive `codec`.
  void validate(const CodecConfig& codec) const;

  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const std::string& text);
};

/// Loss components of one step, each averaged over the batch.
struct StepReport {
  long step = 0;  // 1-based
  long epoch = 0;
  double learning_rate = 0;

  double amplitude = 0;
  double instantaneous_phase = 0;
  double group_delay = 0;
  double angular_frequency = 0;
  double phase = 0;
  double real_imag = 0;
  double consistency = 0;
  double complex = 0;
  double mel = 0;
  double spectral = 0;
  double quantization = 0;
  double generator_gan = 0;
  double distillation = 0;
  double generator_total = 0;
  double discriminator = 0;

  std::vector<double> usage_entropy;  // bits, one per stage
  int reseeded = 0;
  double seconds = 0;

  /// One-line JSON object.
  std::string to_json() const;
};

/// A `length`-sample crop at a uniformly drawn offset; shorter clips are
/// zero-padded at the end.
Eigen::VectorXd random_segment(const Eigen::VectorXd& clip, int length, std::mt19937_64& rng);

class Trainer {
 public:
  Trainer(const CodecConfig& codec, const TrainConfig& config);
  /// Restores model, discriminators, optimiser moments, schedule and RNG.
  /// `config`, when given, replaces the stored training settings (step
  /// budget, rates, weights); its discriminator must match the stored one.
  static Trainer from_checkpoint(const nn::Checkpoint& ckpt, const TrainConfig* config = nullptr);

  /// Enables distillation. The teacher must be non-causal, the student causal,
  /// and their taps must align (ModeError / ConfigError otherwise).
  void set_teacher(std::shared_ptr<const CodecModel> teacher);
  bool distilling() const { return teacher_ != nullptr; }

  /// k-means codebook initialisation from the encoder outputs of `clips`.
  /// step() runs it on its own batch if it has not happened yet.
  void initialize_codebooks(std::span<const Eigen::VectorXd> clips);
  bool codebooks_initialized() const { return codebooks_initialized_; }

  /// One discriminator and one generator update on equally long segments.
  /// Non-finite losses raise NonFiniteError before any parameter changes.
  StepReport step(std::span<const Eigen::VectorXd> batch);
  /// Advances the epoch counter and decays the learning rate.
  void end_epoch();

  CodecModel& model() { return model_; }
  const CodecModel& model() const { return model_; }
  DiscriminatorBank& discriminators() { return *discriminators_; }
  const TrainConfig& config() const { return config_; }
  long steps_done() const { return step_; }
  long epochs_done() const { return epoch_; }
  double learning_rate() const { return generator_opt_.learning_rate(); }
  std::mt19937_64& rng() { return rng_; }

  nn::Checkpoint checkpoint() const;

 private:
  Trainer(CodecModel model, const TrainConfig& config);

  CodecModel model_;
  TrainConfig config_;
  StftConfig analysis_;
  nn::Matrix mel_filterbank_;
  std::unique_ptr<DiscriminatorBank> discriminators_;
  nn::AdamW generator_opt_;
  nn::AdamW discriminator_opt_;
  std::shared_ptr<const CodecModel> teacher_;
  std::mt19937_64 rng_;
  long step_ = 0;
  long epoch_ = 0;
  bool codebooks_initialized_ = false;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  long steps = 0;
  long epochs = 0;
  int skipped_files = 0;  // unreadable or mismatched audio
};

/// Trains on every .wav file in `dataset` (sorted by name), writing
/// `output`/latest.ckpt periodically and at the end and a JSON line per step
/// to `output`/train_log.jsonl. An epoch is one pass over the file list.
/// When `resume` names a checkpoint, training continues from its state.
/// On a non-finite loss the state is saved to `output`/diverged.ckpt and the
/// error rethrown.
TrainResult train(const std::filesystem::path& dataset, const CodecConfig& codec, const TrainConfig& config,
                  const std::filesystem::path& output, const std::function<void(const StepReport&)>& on_step = {},
                  const std::filesystem::path& resume = {});

}  // namespace apcodec
