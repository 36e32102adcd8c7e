#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nlskit {

struct TsneConfig {
  std::optional<double> perplexity;  // default min(30, (N - 1) / 3)
  int iterations = 500;
  double learning_rate = 100.0;
  double early_exaggeration = 4.0;
  int exaggeration_iterations = 100;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iteration = 250;
  int output_dim = 2;
  double perplexity_tolerance = 1e-5;
  int max_bisection_steps = 64;
  int kl_interval = 50;
  std::uint64_t seed = 0;
};

double default_perplexity(std::size_t n_points);

/// Row-conditional Gaussian affinities p(j|i) (row-major N x N, zero
/// diagonal) with per-row bandwidths bisected to the target perplexity.
struct AffinityCalibration {
  std::vector<double> conditional;
  std::vector<double> beta;        // 1 / (2 sigma^2) per row
  std::vector<double> perplexity;  // achieved exp(H) per row
  std::vector<std::size_t> unconverged_rows;
};

/// `points` is row-major N x dim.
AffinityCalibration calibrate_affinities(std::span<const double> points, std::size_t dim, double perplexity,
                                         double tolerance = 1e-5, int max_steps = 64);

/// (p(j|i) + p(i|j)) / 2N: symmetric, entries sum to 1.
std::vector<double> symmetrize_affinities(std::span<const double> conditional, std::size_t n);

/// Shannon perplexity exp(H) of one probability row.
double row_perplexity(std::span<const double> row);

struct TsneResult {
  std::vector<double> coordinates;  // row-major N x output_dim, mean-centred
  std::vector<double> joint;        // symmetric P
  std::vector<double> row_perplexity;
  std::vector<std::size_t> unconverged_rows;
  std::vector<std::pair<int, double>> kl_trace;  // (iteration, KL(P || Q))
};

/// Exact O(N^2) t-SNE. Requires N >= 4, finite points, perplexity < N.
TsneResult tsne(std::span<const double> points, std::size_t dim, const TsneConfig& config);

}  // namespace nlskit
