#include <benchmark/benchmark.h>

#include <random>

#include "nlskit/classifier.hpp"
#include "nlskit/embedding_io.hpp"
#include "nlskit/projection.hpp"
#include "nlskit/stats.hpp"

namespace {

using namespace nlskit;

EmbeddingTensor random_tensor(std::mt19937_64& gen, std::uint32_t layers, std::uint32_t frames, std::uint32_t dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  EmbeddingTensor x(layers, frames, dim);
  for (std::uint32_t l = 0; l < layers; ++l)
    for (std::uint32_t t = 0; t < frames; ++t)
      for (std::uint32_t d = 0; d < dim; ++d) x.at(l, t, d) = n(gen);
  return x;
}

ModelConfig full_size_config(std::uint32_t layers, std::uint32_t dim) {
  ModelConfig c;
  c.input_layers = layers;
  c.input_dim = dim;
  return c;
}

void BM_Forward(benchmark::State& state) {
  std::mt19937_64 gen(1);
  const auto config = full_size_config(13, 768);
  const auto params = ModelParams::initialize(config, 1);
  const auto x = random_tensor(gen, 13, static_cast<std::uint32_t>(state.range(0)), 768);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, config, x, false, 0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(50)->Arg(150)->Unit(benchmark::kMillisecond);

void BM_BackwardBatch(benchmark::State& state) {
  std::mt19937_64 gen(2);
  const auto config = full_size_config(13, 768);
  const auto params = ModelParams::initialize(config, 2);
  std::vector<EmbeddingTensor> xs;
  for (int i = 0; i < state.range(0); ++i) xs.push_back(random_tensor(gen, 13, 50, 768));
  std::vector<Example> batch;
  for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({&xs[i], static_cast<int>(i % 2), i});
  for (auto _ : state) benchmark::DoNotOptimize(backward<float>(params, config, batch, {1.0, 1.0}, true));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BackwardBatch)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Anova(benchmark::State& state) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> groups(3);
  for (auto& g : groups)
    for (int i = 0; i < state.range(0); ++i) g.push_back(n(gen));
  for (auto _ : state) benchmark::DoNotOptimize(one_way_anova(groups));
}
BENCHMARK(BM_Anova)->Arg(16)->Arg(1024);

void BM_Tsne(benchmark::State& state) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto count = static_cast<std::size_t>(state.range(0));
  std::vector<double> points(count * 256);
  for (auto& v : points) v = n(gen);
  TsneConfig config;
  config.seed = 4;
  for (auto _ : state) benchmark::DoNotOptimize(tsne(points, 256, config));
}
BENCHMARK(BM_Tsne)->Arg(60)->Arg(300)->Unit(benchmark::kMillisecond);

void BM_EmbeddingRoundTrip(benchmark::State& state) {
  std::mt19937_64 gen(5);
  const auto x = random_tensor(gen, 13, 150, 768);
  for (auto _ : state) {
    const auto bytes = encode_embedding(x);
    benchmark::DoNotOptimize(decode_embedding(bytes));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(x.data().size() * sizeof(float)));
}
BENCHMARK(BM_EmbeddingRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
