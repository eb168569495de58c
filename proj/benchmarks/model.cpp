#include <benchmark/benchmark.h>

#include "hmap/train/trainer.hpp"

using namespace hmap;

namespace {

// One optimizer step at the default configuration, batch of 64 32x32 images.
void BM_pretrain_step(benchmark::State& state) {
  train::TrainConfig c;
  c.num_samples = 256;
  c.decoder_mask = static_cast<masking::DecoderMask>(state.range(0));
  train::Trainer t(c, train::load_dataset(c));
  for (auto _ : state) {
    if (t.step() == t.total_steps()) {
      state.PauseTiming();
      t.restore(train::Trainer(c, train::load_dataset(c)).checkpoint());
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(t.train_step().loss);
  }
  state.SetLabel(std::string(masking::to_string(c.decoder_mask)));
}
BENCHMARK(BM_pretrain_step)
    ->Arg(static_cast<int>(masking::DecoderMask::map))
    ->Arg(static_cast<int>(masking::DecoderMask::mae))
    ->Unit(benchmark::kMillisecond);

void BM_finetune_step(benchmark::State& state) {
  train::TrainConfig c;
  c.mode = train::Mode::finetune;
  c.num_samples = 256;
  train::Trainer t(c, train::load_dataset(c));
  for (auto _ : state) {
    if (t.step() == t.total_steps()) {
      state.PauseTiming();
      t.restore(train::Trainer(c, train::load_dataset(c)).checkpoint());
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(t.train_step().loss);
  }
}
BENCHMARK(BM_finetune_step)->Unit(benchmark::kMillisecond);

}  // namespace
