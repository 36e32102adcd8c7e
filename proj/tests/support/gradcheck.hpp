#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "nlskit/classifier.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

// Compares the analytic gradient of the batch loss against central
// differences, in double precision with dropout off.
inline GradCheckResult gradient_check(std::uint64_t seed, double h = 1e-5) {
  using namespace nlskit;
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::uint32_t> frames(1, 7);
  ModelConfig config;
  config.input_layers = 3;
  config.input_dim = 5;
  config.conv_channels = 8;
  config.fc_hidden = 6;

  auto params = BasicModelParams<double>::initialize(config, seed);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& block : params.blocks)
    if (block.cols == 1 || block.name == "layer_logits")
      for (auto& v : block.values) v = jitter(gen);

  std::vector<EmbeddingTensor> inputs;
  std::vector<int> labels{0, 1, 1, 0, 1};
  for (std::size_t i = 0; i < labels.size(); ++i)
    inputs.push_back(random_tensor(gen, config.input_layers, frames(gen), config.input_dim));
  std::vector<Example> batch;
  for (std::size_t i = 0; i < inputs.size(); ++i) batch.push_back({&inputs[i], labels[i], 0});
  const auto weights = class_weights(labels);

  auto loss_at = [&](const BasicModelParams<double>& p) { return backward(p, config, batch, weights, false).loss; };
  const auto analytic = backward(params, config, batch, weights, false).gradient;

  GradCheckResult result;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    for (std::size_t k = 0; k < params.blocks[b].values.size(); ++k) {
      auto plus = params, minus = params;
      plus.blocks[b].values[k] += h;
      minus.blocks[b].values[k] -= h;
      const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      const double a = analytic.blocks[b].values[k];
      const double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.parameters;
    }
  }
  return result;
}

}  // namespace oracle
