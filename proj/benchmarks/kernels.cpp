#include <benchmark/benchmark.h>

#include "hmap/numerics/ops.hpp"
#include "hmap/rng.hpp"

using namespace hmap;

namespace {

Tensor normal(Shape shape, Rng& rng, real scale = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& x : t.mutable_data()) x = static_cast<real>(scale * rng.normal());
  return t;
}

void BM_linear(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = normal({8, L, 64}, rng);
  const Tensor w = normal({64, 64}, rng);
  const Tensor b = normal({64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b).data().data());
  state.SetItemsProcessed(state.iterations() * 8 * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_linear)->Arg(16)->Arg(64)->Arg(256);

void BM_selective_scan(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const std::size_t E = 64, S = 8;
  const Tensor u = normal({8, L, E}, rng);
  const Tensor delta = Tensor::full({8, L, E}, real(0.1));
  const Tensor a = Tensor::full({E, S}, real(-1));
  const Tensor bm = normal({8, L, S}, rng);
  const Tensor cm = normal({8, L, S}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(selective_scan(u, delta, a, bm, cm).data().data());
  state.SetItemsProcessed(state.iterations() * 8 * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_selective_scan)->Arg(16)->Arg(64)->Arg(256);

void BM_selective_scan_backward(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const std::size_t E = 64, S = 8;
  Tensor u = normal({8, L, E}, rng);
  u.set_requires_grad(true);
  const Tensor delta = Tensor::full({8, L, E}, real(0.1));
  const Tensor a = Tensor::full({E, S}, real(-1));
  const Tensor bm = normal({8, L, S}, rng);
  const Tensor cm = normal({8, L, S}, rng);
  for (auto _ : state) {
    u.zero_grad();
    backward(sum(selective_scan(u, delta, a, bm, cm)));
  }
}
BENCHMARK(BM_selective_scan_backward)->Arg(64);

void BM_softmax_masked(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Tensor logits = normal({8, L, L}, rng);
  BoolMask mask{1, L, L, std::vector<std::uint8_t>(L * L)};
  for (std::size_t q = 0; q < L; ++q)
    for (std::size_t k = 0; k <= q; ++k) mask.bits[q * L + k] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(softmax_masked(logits, mask).data().data());
}
BENCHMARK(BM_softmax_masked)->Arg(16)->Arg(64)->Arg(256);

}  // namespace
BENCHMARK_MAIN();
