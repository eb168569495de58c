#pragma once

#include <optional>
#include <ostream>

#include "hmap/train/trainer.hpp"

namespace hmap::train {

struct PretrainResult {
  RunSummary summary;
  Checkpoint checkpoint;
  double first_epoch_mse = 0.0;
  double final_epoch_mse = 0.0;
};

/// Full pretraining run on the configured dataset. config.mode must be pretrain.
PretrainResult pretrain(const TrainConfig& config, const LogFn& log = {},
                        std::ostream* metrics_csv = nullptr);

struct FinetuneReport {
  RunSummary summary;
  Checkpoint checkpoint;
  double accuracy = 0.0;  // top-1 on the held-out split
  std::size_t eval_records = 0;
  std::uint64_t steps = 0;
  bool from_scratch = true;
};

/// Attaches a mean-pool + linear head and trains it (with the backbone unless
/// freeze_backbone). `init` supplies encoder weights; none means from scratch.
/// config.mode must be finetune.
FinetuneReport finetune(const TrainConfig& config, const Checkpoint* init = nullptr,
                        const LogFn& log = {}, std::ostream* metrics_csv = nullptr);

}  // namespace hmap::train
