#include "hmap/train/session.hpp"

#include "hmap/errors.hpp"

namespace hmap::train {

PretrainResult pretrain(const TrainConfig& config, const LogFn& log, std::ostream* metrics_csv) {
  if (config.mode != Mode::pretrain) throw ConfigError("pretrain needs mode = pretrain", 0);
  Trainer trainer(config, load_dataset(config), log);
  PretrainResult out;
  out.summary = trainer.run(metrics_csv);
  if (!out.summary.epochs.empty()) {
    out.first_epoch_mse = out.summary.epochs.front().loss;
    out.final_epoch_mse = out.summary.epochs.back().loss;
  }
  out.checkpoint = trainer.checkpoint();
  return out;
}

FinetuneReport finetune(const TrainConfig& config, const Checkpoint* init, const LogFn& log,
                        std::ostream* metrics_csv) {
  if (config.mode != Mode::finetune) throw ConfigError("finetune needs mode = finetune", 0);
  Dataset data = load_dataset(config);
  if (data.eval.empty()) throw ConfigError("finetune needs a held-out split (eval_fraction > 0)", 0);
  Trainer trainer(config, std::move(data), log);
  if (init) trainer.init_encoder_from(*init);
  FinetuneReport out;
  out.from_scratch = init == nullptr;
  out.summary = trainer.run(metrics_csv);
  out.accuracy = out.summary.eval_accuracy.value_or(0.0);
  out.eval_records = trainer.dataset().eval.size();
  out.steps = trainer.step();
  out.checkpoint = trainer.checkpoint();
  return out;
}

}  // namespace hmap::train
