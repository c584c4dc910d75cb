#include <benchmark/benchmark.h>

#include "vitforge/ops.hpp"
#include "vitforge/vit.hpp"

namespace vitforge {
namespace {

Tensor<float> images(std::size_t batch, const ViTConfig& cfg) {
  Tensor<float> t({batch, cfg.image_height, cfg.image_width, cfg.channels});
  Rng rng(1);
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform());
  return t;
}

void BM_Patchify(benchmark::State& state) {
  const ViTConfig cfg;
  const auto x = images(32, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(patchify(x, cfg.patch_size));
}
BENCHMARK(BM_Patchify);

void BM_ViTForwardEval(benchmark::State& state) {
  const ViTConfig cfg;
  ViTClassifier model(cfg, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = images(batch, cfg);
  Rng rng(2);
  NoGradScope<float> off;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::eval, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ViTForwardEval)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ViTTrainStep(benchmark::State& state) {
  const ViTConfig cfg;
  ViTClassifier model(cfg, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = images(batch, cfg);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % cfg.num_classes);
  auto params = model.parameters();
  Rng rng(3);
  for (auto _ : state) {
    GradTape<float> tape;
    TapeScope<float> scope(tape);
    const auto loss = softmax_cross_entropy(model.forward(x, Mode::train, rng), labels);
    tape.backward(loss);
    for (auto& p : params) p.tensor.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ViTTrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace vitforge
