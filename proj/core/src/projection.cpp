#include "nlskit/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nlskit/error.hpp"
#include "nlskit/random.hpp"

namespace nlskit {

namespace {

constexpr double kMinGain = 0.01;
constexpr double kInitialStd = 1e-4;
constexpr double kFloor = std::numeric_limits<double>::min();

std::vector<double> squared_distances(std::span<const double> points, std::size_t n, std::size_t dim) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = points[i * dim + k] - points[j * dim + k];
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

// Fills row i of p(j|i) for precision beta and returns the entropy (nats).
double fill_row(std::span<const double> dist_row, std::size_t i, double beta, double min_dist, std::span<double> row) {
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    row[j] = j == i ? 0.0 : std::exp(-beta * (dist_row[j] - min_dist));
    total += row[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    row[j] /= total;
    if (j != i) weighted += row[j] * (dist_row[j] - min_dist);
  }
  return std::log(total) + beta * weighted;
}

}  // namespace

double default_perplexity(std::size_t n_points) {
  return std::min(30.0, (static_cast<double>(n_points) - 1.0) / 3.0);
}

double row_perplexity(std::span<const double> row) {
  double h = 0.0;
  for (double p : row)
    if (p > 0.0) h -= p * std::log(p);
  return std::exp(h);
}

AffinityCalibration calibrate_affinities(std::span<const double> points, std::size_t dim, double perplexity,
                                         double tolerance, int max_steps) {
  if (dim == 0 || points.size() % dim != 0) throw DimensionError("points must be N x dim");
  const std::size_t n = points.size() / dim;
  if (n < 2) throw ArgumentError("need at least two points");
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n))
    throw ArgumentError("perplexity must be in (0, N)");

  const auto dist = squared_distances(points, n, dim);
  AffinityCalibration cal;
  cal.conditional.assign(n * n, 0.0);
  cal.beta.assign(n, 1.0);
  cal.perplexity.assign(n, 0.0);
  const double target = std::log(perplexity);

  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> dist_row(dist.data() + i * n, n);
    std::span<double> row(cal.conditional.data() + i * n, n);
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) min_dist = std::min(min_dist, dist_row[j]);

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double best_beta = beta, best_gap = std::numeric_limits<double>::infinity();
    bool converged = false;
    for (int step = 0; step < max_steps; ++step) {
      const double entropy = fill_row(dist_row, i, beta, min_dist, row);
      const double gap = std::fabs(std::exp(entropy) - perplexity);
      if (gap < best_gap) {
        best_gap = gap;
        best_beta = beta;
      }
      if (gap < tolerance) {
        converged = true;
        break;
      }
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    if (!converged) {
      cal.unconverged_rows.push_back(i);
      beta = best_beta;
    }
    fill_row(dist_row, i, beta, min_dist, row);
    cal.beta[i] = beta;
    cal.perplexity[i] = row_perplexity(row);
  }
  return cal;
}

std::vector<double> symmetrize_affinities(std::span<const double> conditional, std::size_t n) {
  if (conditional.size() != n * n) throw DimensionError("conditional affinities must be N x N");
  std::vector<double> p(n * n, 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) * scale;
  return p;
}

TsneResult tsne(std::span<const double> points, std::size_t dim, const TsneConfig& config) {
  if (dim == 0 || points.size() % dim != 0) throw DimensionError("points must be N x dim");
  const std::size_t n = points.size() / dim;
  if (n < 4) throw ArgumentError("t-SNE needs at least 4 points");
  if (config.iterations < 1) throw ArgumentError("t-SNE needs at least one iteration");
  if (config.output_dim < 1) throw ArgumentError("output_dim must be >= 1");
  for (double v : points)
    if (!std::isfinite(v)) throw ValueError("t-SNE input contains non-finite values");
  const double perplexity = config.perplexity.value_or(default_perplexity(n));
  if (perplexity >= static_cast<double>(n)) throw ArgumentError("perplexity must be smaller than N");

  auto cal = calibrate_affinities(points, dim, perplexity, config.perplexity_tolerance, config.max_bisection_steps);
  TsneResult result;
  result.joint = symmetrize_affinities(cal.conditional, n);
  result.row_perplexity = std::move(cal.perplexity);
  result.unconverged_rows = std::move(cal.unconverged_rows);
  const auto& p = result.joint;

  const auto out_dim = static_cast<std::size_t>(config.output_dim);
  auto& y = result.coordinates;
  y.resize(n * out_dim);
  Rng rng(config.seed);
  for (auto& v : y) v = rng.normal(0.0, kInitialStd);

  std::vector<double> update(y.size(), 0.0), gains(y.size(), 1.0), grad(y.size(), 0.0);
  std::vector<double> kernel(n * n, 0.0);

  for (int iter = 0; iter < config.iterations; ++iter) {
    const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch_iteration ? config.initial_momentum : config.final_momentum;

    // Student-t kernel (1 + |yi - yj|^2)^-1 and its normaliser.
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < out_dim; ++k) {
          const double diff = y[i * out_dim + k] - y[j * out_dim + k];
          s += diff * diff;
        }
        const double w = 1.0 / (1.0 + s);
        kernel[i * n + j] = kernel[j * n + i] = w;
        z += 2.0 * w;
      }
    }

    // dC/dy_i = 4 sum_j (p_ij - q_ij) (y_i - y_j) (1 + |y_i - y_j|^2)^-1
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = kernel[i * n + j];
        const double coeff = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
        for (std::size_t k = 0; k < out_dim; ++k) grad[i * out_dim + k] += coeff * (y[i * out_dim + k] - y[j * out_dim + k]);
      }
    }

    for (std::size_t k = 0; k < y.size(); ++k) {
      gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], kMinGain);
      update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }

    for (std::size_t k = 0; k < out_dim; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y[i * out_dim + k];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y[i * out_dim + k] -= mean;
    }

    const bool last = iter + 1 == config.iterations;
    if (config.kl_interval > 0 && ((iter + 1) % config.kl_interval == 0 || last)) {
      double kl = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j || p[i * n + j] <= 0.0) continue;
          kl += p[i * n + j] * std::log(p[i * n + j] / std::max(kernel[i * n + j] / z, kFloor));
        }
      result.kl_trace.emplace_back(iter + 1, kl);
    }
  }

  for (double v : y)
    if (!std::isfinite(v)) throw ValueError("t-SNE diverged to non-finite coordinates");
  return result;
}

}  // namespace nlskit
