#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/optim/adam.h>

#include "duelvae/data.hpp"
#include "duelvae/model.hpp"
#include "duelvae/networks.hpp"
#include "duelvae/objectives.hpp"
#include "duelvae/schedule.hpp"

namespace duelvae {

struct TrainConfig {
  DatasetSpec data;
  ObjectiveConfig objective;
  DecoderKind decoder = DecoderKind::pixelcnn;
  PixelCnnSize size = PixelCnnSize::small;
  int64_t latent_dim = 16;
  int64_t batch_size = 32;
  int64_t total_steps = 20000;
  uint64_t seed = 0;
  int64_t log_every = 100;
  int64_t checkpoint_every = 5000;
  LrSchedule lr;
  NetworkWidths widths;
  int64_t components = 5;
  int64_t pseudo_inputs = 280;
  bool double_precision = false;

  void validate() const;
  [[nodiscard]] int levels() const { return data.binarize == Binarization::none ? 256 : 2; }
  [[nodiscard]] ModelConfig model_config() const;
};

struct MetricsRow {
  int64_t step = 0;
  double distortion = 0.0;
  double aux_distortion = 0.0;
  double rate = 0.0;
  double elbo_nats = 0.0;
  double beta_eff = 0.0;
  double lr = 0.0;
};

/// Window-averaged training metrics. Each row averages the steps since the
/// previous row and stores elbo_nats = distortion + rate of those averages.
struct MetricsTimeline {
  std::vector<MetricsRow> rows;
  std::optional<int64_t> drop_step;

  static constexpr const char* kHeader = "step,distortion,aux_distortion,rate,elbo_nats,beta_eff,lr";

  [[nodiscard]] std::string to_csv() const;
  static MetricsTimeline from_csv(const std::string& text);
  void append(const MetricsRow& row);
  bool operator==(const MetricsTimeline&) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int64_t step, std::optional<std::filesystem::path> snapshot);
  [[nodiscard]] int64_t step() const { return step_; }
  [[nodiscard]] const std::optional<std::filesystem::path>& snapshot() const { return snapshot_; }

 private:
  int64_t step_;
  std::optional<std::filesystem::path> snapshot_;
};

/// Stored alongside the parameters in every checkpoint.
struct CheckpointMeta {
  int format_version = 1;
  std::string config_digest;
  int64_t step = 0;
  uint64_t seed = 0;
  std::string config_json;
  std::string timeline_csv;
  std::optional<int64_t> drop_step;
};

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const std::filesystem::path& path, VaeModel& model,
                     torch::optim::Adam* optimizer, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Loads parameters (and optimizer state if given) into already-built objects.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, VaeModel& model,
                               torch::optim::Adam* optimizer);
/// Rebuilds the model described by a checkpoint's stored configuration.
VaeModel load_model(const std::filesystem::path& path, TrainConfig* config_out = nullptr);

/// Adam on the schedule, one batch per step.
///
/// Batches, latent noise and initialization are all derived from the seed and
/// the step index, so a run resumed from a checkpoint continues exactly as an
/// uninterrupted one.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const LabeledImageDataset& train,
          std::optional<std::filesystem::path> run_dir = std::nullopt);

  /// Restores model, optimizer, step and timeline from a checkpoint written
  /// for the same configuration.
  void restore(const std::filesystem::path& checkpoint);

  /// One optimizer update at the current step.
  LossBreakdown step();
  /// Steps until `step() == until`, logging and checkpointing on cadence.
  void run_until(int64_t until, const std::function<void(const MetricsRow&)>& on_log = {});
  void save(const std::filesystem::path& path);

  [[nodiscard]] int64_t current_step() const { return step_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const MetricsTimeline& timeline() const { return timeline_; }
  [[nodiscard]] VaeModel& model() { return model_; }
  [[nodiscard]] torch::optim::Adam& optimizer() { return *optimizer_; }
  void set_drop_step(std::optional<int64_t> s) { timeline_.drop_step = s; }

 private:
  void flush_window();

  TrainConfig cfg_;
  std::string digest_;
  BatchIterator batches_;
  VaeModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::optional<std::filesystem::path> run_dir_;
  int64_t step_ = 0;
  MetricsTimeline timeline_;
  MetricsRow window_;
  int64_t window_count_ = 0;
};

struct TrainResult {
  MetricsTimeline timeline;
  std::optional<std::filesystem::path> checkpoint;
  double wall_seconds = 0.0;
};

/// Full training run. With a run directory, writes periodic and final
/// checkpoints plus metrics.csv, and resumes from the newest periodic
/// checkpoint found there.
TrainResult train(const TrainConfig& cfg, const LabeledImageDataset& train,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt);

/// Post-drop duration used when none is given.
int64_t default_extra_steps(int64_t total_steps, int64_t drop_step);

/// Trains a dueling configuration, disables the auxiliary term at
/// `drop_step`, and continues for `extra_steps` more updates.
TrainResult drop_regularization_run(const TrainConfig& cfg, int64_t drop_step,
                                    std::optional<int64_t> extra_steps,
                                    const LabeledImageDataset& train,
                                    const std::optional<std::filesystem::path>& run_dir = std::nullopt);

}  // namespace duelvae
