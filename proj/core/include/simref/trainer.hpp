#pragma once

#include <filesystem>
#include <span>

#include "simref/nets.hpp"
#include "simref/objectives.hpp"
#include "simref/replay_buffer.hpp"
#include "simref/toyworld.hpp"

namespace simref {

/// How the history buffer shapes one discriminator minibatch.
///  augment: fake stream = b/2 current refined + b/2 from the buffer (b fakes)
///           paired with b independently sampled reals, keeping the two loss
///           sums balanced.
///  split:   total batch stays b: b/4 current + b/4 buffer fakes vs b/2
///           reals (requires b divisible by 4). Either way b/2 fresh refined
///           images replace b/2 buffer slots per update.
enum class HistoryMode : uint8_t { augment, split };

const char* to_string(HistoryMode m);
HistoryMode history_mode_from_string(const std::string& s);

struct TrainConfig {
  uint32_t T = 2000;       // outer steps
  uint32_t k_g = 2;        // refiner updates per step
  uint32_t k_d = 1;        // discriminator updates per step
  uint32_t b = 32;         // minibatch size (even)
  float lr_r = 0.001f;
  float lr_d = 0.001f;
  float lambda = 0.5f;
  uint32_t buffer_capacity = 512;  // 16*b at the desk defaults
  uint32_t pretrain_r_steps = 1000;
  uint32_t pretrain_d_steps = 200;
  uint64_t seed = 7;
  HistoryMode history_mode = HistoryMode::augment;
  FeatureTransform psi = FeatureTransform::identity;
  bool use_history = true;   // false = the no-history ablation
  bool global_adv = false;   // true = whole-image decision ablation
  uint32_t decay_at_step = 0;  // 0 keeps the learning rate constant
  float decay_lr_r = 0.0f;
  float decay_lr_d = 0.0f;
  uint32_t checkpoint_every = 0;  // outer steps between checkpoints; 0 = end only

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TrainLogRecord {
  uint32_t step = 0;
  float loss_r = 0, loss_realism = 0, loss_selfreg = 0, loss_d = 0;
  float mean_pfake_refined = 0, mean_pfake_real = 0;
};

/// One record per completed outer step; within a step the refiner values come
/// from the last of the K_g updates and the discriminator values from the
/// last of the K_d updates.
struct TrainLog {
  std::vector<TrainLogRecord> records;

  void write_csv(const std::filesystem::path& path) const;
  static TrainLog read_csv(const std::filesystem::path& path);
  static const char* csv_header();
};

/// Everything the loop owns: both networks, the history buffer, the sampling
/// generator and the step counters. Serializes to a checkpoint directory from
/// which training resumes bit-identically.
struct TrainerState {
  TrainConfig config;
  Refiner refiner;
  Discriminator disc;
  ReplayBuffer buffer;
  Pcg32 sampler;
  uint32_t step = 0;  // completed outer steps
  uint64_t refiner_updates = 0;
  uint64_t disc_updates = 0;
  bool pretrained_r = false;
  bool pretrained_d = false;
  bool buffer_seeded = false;
};

TrainerState make_trainer(const TrainConfig& cfg, const RefinerArch& rarch, DiscArch darch);

/// Self-regularization-only pretraining of the refiner; returns per-step
/// losses (useful for monotonicity checks).
std::vector<float> pretrain_refiner(TrainerState& st, std::span<const AnnotatedImage> synthetic);

/// Discriminator pretraining on current-refiner fakes; the buffer stays out
/// of play here.
std::vector<float> pretrain_discriminator(TrainerState& st,
                                          std::span<const AnnotatedImage> synthetic,
                                          std::span<const AnnotatedImage> real);

/// Fills the history buffer from the pretrained refiner.
void seed_buffer(TrainerState& st, std::span<const AnnotatedImage> synthetic);

/// The adversarial loop: per outer step, K_g refiner updates with the
/// discriminator frozen, then K_d discriminator updates with the refiner
/// frozen, each followed by one b/2-slot buffer replacement. Appends records
/// for steps state.step+1 .. config.T. A non-finite loss aborts with the
/// offending step in the message. When run_dir is given, checkpoints land in
/// run_dir/ckpt every checkpoint_every steps and at the end.
TrainLog train(TrainerState& st, std::span<const AnnotatedImage> synthetic,
               std::span<const AnnotatedImage> real,
               const std::filesystem::path* run_dir = nullptr, TrainLog* existing_log = nullptr);

/// Convenience pipeline: pretrain both networks, seed the buffer, train.
TrainLog run_training(TrainerState& st, std::span<const AnnotatedImage> synthetic,
                      std::span<const AnnotatedImage> real,
                      const std::filesystem::path* run_dir = nullptr);

void save_trainer_state(const TrainerState& st, const std::filesystem::path& dir);

/// Loads a checkpoint. The requested config must match the stored one exactly
/// unless allow_config_change is set; a missing or malformed buffer stack is
/// an explicit error.
TrainerState load_trainer_state(const std::filesystem::path& dir, const TrainConfig& requested,
                                bool allow_config_change);

}  // namespace simref
