#include <benchmark/benchmark.h>

#include <random>

#include "tslider/encoder.hpp"
#include "tslider/lora.hpp"
#include "tslider/trainer.hpp"

namespace tslider {
namespace {

TextEncoder bench_encoder(std::size_t d_model) {
  EncoderConfig c;
  c.d_model = d_model;
  c.n_heads = 4;
  return make_text_encoder(c, Vocab::load(TSLIDER_BENCH_VOCAB));
}

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = dist(rng);
  return Tensor({rows, cols}, std::move(data));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(77, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 77 * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Encode(benchmark::State& state) {
  const auto enc = bench_encoder(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode("portrait of a young person, smiling"));
}
BENCHMARK(BM_Encode)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_EncodeWithSlider(benchmark::State& state) {
  const auto enc = bench_encoder(32);
  auto set = make_adapter_set<float>(enc.weights.config, 4, attention_targets(enc.weights.config.n_layers), 1);
  set_multiplier(set, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode("portrait of a young person, smiling", &set));
}
BENCHMARK(BM_EncodeWithSlider)->Unit(benchmark::kMicrosecond);

void BM_TrainEpochs(benchmark::State& state) {
  const std::vector encs{bench_encoder(32)};
  const PromptSpec spec{"person, young", "person, old", "person, young", {{"male"}}};
  TrainConfig tc;
  tc.epochs = 10;
  tc.rank = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_slider(encs, spec, tc));
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_TrainEpochs)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace tslider

BENCHMARK_MAIN();
