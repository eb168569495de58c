#pragma once

#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hmap/data/image.hpp"
#include "hmap/objective/loss.hpp"
#include "hmap/train/checkpoint.hpp"
#include "hmap/train/config.hpp"
#include "hmap/train/model.hpp"
#include "hmap/train/optimizer.hpp"

namespace hmap::train {

struct Dataset {
  std::vector<data::DatasetRecord> train;
  std::vector<data::DatasetRecord> eval;
};

/// Synthetic data or an archive, checked against the config. Pretraining
/// uses every record; fine-tuning holds out the last eval_fraction.
/// Archive problems are rethrown with the path attached.
Dataset load_dataset(const TrainConfig& config);

/// True when MAP_DETERMINISTIC=1 is set in the environment.
bool deterministic_env();

/// One logfmt event line, e.g. "event=epoch epoch=1 mse=0.5".
using LogFn = std::function<void(const std::string& line)>;

struct StepResult {
  std::uint64_t step = 0;  // 1-based index of the step just taken
  bool skipped = false;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t correct = 0;  // fine-tuning only
  std::size_t count = 0;    // batch size
  objective::LossReport report;  // pretraining only
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double loss = 0.0;      // masked MSE (pretrain) or cross-entropy (finetune)
  double train_accuracy = 0.0;
  objective::LossReport report;
};

struct RunSummary {
  std::vector<EpochMetrics> epochs;
  std::size_t skipped_steps = 0;
  std::optional<double> eval_accuracy;  // fine-tuning with a held-out split
};

/// Step-based training loop for either mode.
///
/// Every batch is a pure function of (seed, step): the data order of epoch e
/// comes from a stream forked off the seed, and augmentation draws from a
/// per-step stream. Mask seeds come from the running generator whose state is
/// checkpointed, so a restored trainer continues bit-for-bit. With threads > 1
/// and no MAP_DETERMINISTIC, the next batch is assembled on a background thread;
/// the result is identical either way.
class Trainer {
 public:
  Trainer(TrainConfig config, Dataset data, LogFn log = {});
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }
  const Dataset& dataset() const { return data_; }

  std::uint64_t steps_per_epoch() const;
  std::uint64_t total_steps() const;
  std::uint64_t warmup_steps() const;
  std::uint64_t step() const { return step_; }
  std::size_t skipped_steps() const { return skipped_; }

  StepResult train_step();
  /// Trains to total_steps(), writing one CSV line per finished epoch (and the
  /// header when starting from step 0). Throws NumericError once more than 1%
  /// of the planned steps have been skipped.
  RunSummary run(std::ostream* metrics_csv = nullptr);

  std::string metrics_header() const;

  Checkpoint checkpoint() const;
  /// Resumes from a checkpoint written by a trainer of the same mode and
  /// architecture. Throws IncompatibleCheckpointError naming the first field
  /// that differs.
  void restore(const Checkpoint& checkpoint);
  /// Fine-tuning: copies the encoder weights of any checkpoint with a matching
  /// backbone; the head and optimizer start fresh.
  void init_encoder_from(const Checkpoint& checkpoint);

  /// Top-1 accuracy of the classifier on `records`.
  double accuracy(const std::vector<data::DatasetRecord>& records);
  /// Masked reconstruction error on `records` with masks drawn from `seed`.
  objective::LossReport reconstruction(const std::vector<data::DatasetRecord>& records,
                                       std::uint64_t seed);

 private:
  struct Prepared {
    std::uint64_t step = 0;
    Tensor tokens;
    Tensor targets;
    std::vector<std::uint32_t> labels;
  };

  Prepared prepare(std::uint64_t step) const;
  Prepared take_batch();
  void log(const std::string& line) const;
  void rebuild_optimizer();
  void check_architecture(const TrainConfig& other, bool full) const;

  TrainConfig config_;
  Dataset data_;
  LogFn log_;
  Model model_;
  AdamW optimizer_;
  Rng rng_;
  std::uint64_t step_ = 0;
  std::size_t skipped_ = 0;
  bool prefetch_ = false;
  std::optional<std::future<Prepared>> pending_;
};

/// Architecture fields compared between a checkpoint and a config.
const std::vector<std::string>& architecture_keys();

}  // namespace hmap::train
