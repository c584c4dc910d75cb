#include <benchmark/benchmark.h>

#include "vitforge/ops.hpp"
#include "vitforge/rng.hpp"

namespace vitforge {
namespace {

Tensor<float> filled(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled({n, n}, 1), b = filled({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(144)->Arg(256);

// Token projection shape of the default encoder: [B, 144, 64] x [64, 64].
void BM_LinearTokens(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = filled({batch, 144, 64}, 3), w = filled({64, 64}, 4), b = filled({64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b));
}
BENCHMARK(BM_LinearTokens)->Arg(1)->Arg(32);

void BM_Softmax(benchmark::State& state) {
  const auto x = filled({32, 4, 144, 144}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(softmax(x, -1));
}
BENCHMARK(BM_Softmax);

void BM_Layernorm(benchmark::State& state) {
  const auto x = filled({32, 144, 64}, 7), g = filled({64}, 8), b = filled({64}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(layernorm(x, g, b, 1e-6f));
}
BENCHMARK(BM_Layernorm);

void BM_MatmulBackward(benchmark::State& state) {
  auto a = filled({256, 256}, 10), b = filled({256, 256}, 11);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    GradTape<float> tape;
    TapeScope<float> scope(tape);
    const auto out = sum(reshape(matmul(a, b), {256 * 256}), 0);
    tape.backward(out);
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward);

}  // namespace
}  // namespace vitforge
