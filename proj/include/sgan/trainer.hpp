#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <string>

#include "sgan/checkpoint.hpp"
#include "sgan/config.hpp"
#include "sgan/data_io.hpp"
#include "sgan/losses.hpp"
#include "sgan/networks.hpp"
#include "sgan/optim.hpp"
#include "sgan/rng.hpp"

namespace sgan {

enum class TrainMode {
  kJoint,       ///< F, G, E and D updated together every step
  kSequential,  ///< F/G/D first, then E alone against the frozen generator
};

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  NetworkConfig network = NetworkConfig::desk();
  LossWeights weights;

  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double mapping_lr_multiplier = 0.01;
  double r1_gamma = 10.0;
  int r1_interval = 16;
  int batch_size = 8;
  long total_steps = 2000;
  double ema_decay = 0.999;
  bool ema_warmup = true;
  double hflip_prob = 0.5;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kJoint;
  /// Fraction of total_steps spent in the F/G/D phase of sequential mode.
  double sequential_split = 0.5;

  std::string dataset = "toy";
  std::uint64_t data_seed = 1;
  int log_every = 10;
  long checkpoint_every = 500;

  void validate() const;
};

void to_json(Json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
void from_json(const Json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Horizontal flip of each sample with probability p. Consumes exactly one
/// uniform draw per sample.
Tensor<float> augment(const Tensor<float>& batch, double hflip_prob, Rng& rng);

/// One {step, name, value} JSON object per line.
void write_log(std::ostream& os, long step, const LossBundle& b);

/// Owns the live networks, their EMA shadows, optimizer state and the RNG.
/// Everything that influences future steps is in the checkpoint, so a resumed
/// run continues bit-identically.
class Trainer {
 public:
  /// Opens cfg.dataset (train split).
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const TrainConfig& cfg, std::shared_ptr<const ImageSource> data);
  // Optimizer and EMA state alias the model's parameters.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;

  /// Restores everything saved by save(). Throws NotFoundError for a missing file.
  static Trainer resume(const std::filesystem::path& ckpt);
  static Trainer resume(const std::filesystem::path& ckpt, std::shared_ptr<const ImageSource> data);

  /// One update on an already-augmented batch [B, 3, S, S]: D step, then the
  /// F/G/E step, then EMA. Throws TrainingDiverged before applying an update
  /// whose losses are not finite.
  LossBundle train_step(const Tensor<float>& real);
  /// Draws, augments and trains on the next batch.
  LossBundle next();
  /// Trains until step() == until. `on_step` sees every step's losses.
  void run(long until, std::ostream* log = nullptr,
           const std::function<void(long, const LossBundle&)>& on_step = {});

  long step() const { return step_; }
  /// 0 in joint mode; 1 or 2 for the current sequential phase.
  int phase() const;
  const TrainConfig& config() const { return cfg_; }
  const ImageSource& data() const { return *data_; }

  SpatialGan<float>& model() { return model_; }
  const SpatialGan<float>& model() const { return model_; }
  /// F/G/E are the EMA shadows; its D is never trained.
  const SpatialGan<float>& ema_model() const { return ema_; }

  Archive to_archive() const;
  void save(const std::filesystem::path& path) const;

 private:
  void init();
  void restore(const Archive& a);
  LossBundle joint_step(const Tensor<float>& real);
  LossBundle sequential_step(const Tensor<float>& real);
  void d_step(const Tensor<float>& real, bool domain_guided, LossBundle& b);
  void check(const LossBundle& b, const char* stage) const;

  TrainConfig cfg_;
  std::shared_ptr<const ImageSource> data_;
  SpatialGan<float> model_, ema_;
  Adam adam_f_, adam_g_, adam_e_, adam_d_;
  EmaState ema_f_, ema_g_, ema_e_;
  Rng rng_;
  Batcher batcher_;
  RandomConvPyramid<float> features_;
  long step_ = 0;
};

/// Networks from a checkpoint for inference; F/G/E from the EMA shadows
/// unless `use_ema` is false.
SpatialGan<float> load_model(const std::filesystem::path& ckpt, bool use_ema = true);
SpatialGan<float> model_from_archive(const Archive& a, bool use_ema = true);

}  // namespace sgan
