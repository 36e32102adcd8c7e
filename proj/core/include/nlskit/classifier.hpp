#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nlskit/corpus.hpp"
#include "nlskit/embedding_io.hpp"

namespace nlskit {

/// Shape of the classification head. Layer count and dimension come from the
/// embeddings; the remaining fields default to the published architecture
/// (three kernel-1 convolutions of 256 channels, dropout 0.2, a 256-unit
/// hidden layer and two outputs). Smaller widths are only meant for tests.
struct ModelConfig {
  std::uint32_t input_layers = 0;
  std::uint32_t input_dim = 0;
  std::uint32_t conv_channels = 256;
  std::uint32_t conv_layers = 3;
  std::uint32_t conv_kernel = 1;
  std::uint32_t fc_hidden = 256;
  std::uint32_t n_classes = 2;
  float dropout_p = 0.2f;

  /// Throws ArgumentError when a field is out of range.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Scalar>
struct ParamBlock {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;  // 1 for vectors
  std::vector<Scalar> values;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Learnable parameters in checkpoint order:
///   layer_logits [L], then conv{k}.weight [out x in] and conv{k}.bias [out]
///   for each convolution, then fc1.weight [H x C], fc1.bias [H],
///   fc2.weight [2 x H], fc2.bias [2].
template <typename Scalar>
struct BasicModelParams {
  std::vector<ParamBlock<Scalar>> blocks;

  /// All-zero parameters shaped for `config`.
  static BasicModelParams zeros(const ModelConfig& config);

  /// Layer logits 0, biases 0, weights uniform in +-sqrt(1/fan_in).
  static BasicModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  std::size_t size() const;
  bool all_finite() const;

  ParamBlock<Scalar>& layer_logits() { return blocks.front(); }
  const ParamBlock<Scalar>& layer_logits() const { return blocks.front(); }

  /// Softmax of the layer logits.
  std::vector<Scalar> layer_weights() const;

  template <typename Other>
  BasicModelParams<Other> cast() const {
    BasicModelParams<Other> out;
    for (const auto& b : blocks) {
      out.blocks.push_back({b.name, b.rows, b.cols, std::vector<Other>(b.values.begin(), b.values.end())});
    }
    return out;
  }

  friend bool operator==(const BasicModelParams&, const BasicModelParams&) = default;
};

using ModelParams = BasicModelParams<float>;

template <typename Scalar>
struct ForwardOutput {
  std::vector<Scalar> logits;  // n_classes
  std::vector<Scalar> pooled;  // conv_channels
};

/// Runs the head on one utterance. Train mode applies inverted dropout after
/// each convolution's ReLU using a mask drawn from `dropout_seed`; eval mode
/// is deterministic. Throws DimensionError on shape mismatch.
template <typename Scalar>
ForwardOutput<Scalar> forward(const BasicModelParams<Scalar>& params, const ModelConfig& config,
                              const EmbeddingTensor& x, bool train_mode, std::uint64_t dropout_seed);

/// Class weights N / (2 * N_c) over a label list. Throws WeightError when a
/// class does not occur.
std::array<double, 2> class_weights(std::span<const int> labels);

/// Mean over the batch of w_y * -log softmax(logits)_y. `logits` holds one
/// row of two values per label.
template <typename Scalar>
Scalar loss_weighted_ce(std::span<const Scalar> logits, std::span<const int> labels,
                        const std::array<double, 2>& weights);

struct Example {
  const EmbeddingTensor* x = nullptr;
  int label = 0;
  std::uint64_t dropout_seed = 0;
};

template <typename Scalar>
struct LossAndGradient {
  Scalar loss = 0;
  BasicModelParams<Scalar> gradient;
  std::vector<Scalar> logits;  // batch x n_classes, row-major
};

/// Mean weighted cross-entropy over `batch` and its exact gradient with
/// respect to every parameter block. The ReLU derivative at 0 is taken as 0.
template <typename Scalar>
LossAndGradient<Scalar> backward(const BasicModelParams<Scalar>& params, const ModelConfig& config,
                                 std::span<const Example> batch, const std::array<double, 2>& weights,
                                 bool train_mode);

/// Logits for many utterances in eval mode (batch x n_classes, row-major).
template <typename Scalar>
std::vector<Scalar> forward_batch(const BasicModelParams<Scalar>& params, const ModelConfig& config,
                                  std::span<const EmbeddingTensor* const> inputs);

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  int max_epochs = 40;
  int patience = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename Scalar>
struct AdamState {
  BasicModelParams<Scalar> m;
  BasicModelParams<Scalar> v;

  static AdamState zeros_like(const BasicModelParams<Scalar>& params) {
    AdamState s;
    s.m = params;
    for (auto& b : s.m.blocks) std::fill(b.values.begin(), b.values.end(), Scalar{0});
    s.v = s.m;
    return s;
  }
};

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected) with
/// weight decay added to the gradient as an L2 term. `step` counts from 1.
/// Throws TrainingError naming the block when a gradient is not finite.
template <typename Scalar>
void adam_step(BasicModelParams<Scalar>& params, const BasicModelParams<Scalar>& gradient, AdamState<Scalar>& state,
               std::uint64_t step, const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainedModel {
  ModelConfig config;
  ModelParams params;
  std::vector<EpochLog> log;
  int best_epoch = 0;

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains the head on `items` (labels from the dataset, tensors from a
/// preloaded cache). A seeded 8:2 utterance-level split provides the
/// validation set; early stopping watches validation loss and the best
/// epoch's parameters are returned. `config.input_layers/input_dim` may be 0
/// to take them from the data. Throws TrainingError for a single-class
/// dataset and WeightError when the training split misses a class.
TrainedModel train(const Corpus& corpus, std::span<const TaskItem> items, const EmbeddingCache& embeddings,
                   ModelConfig config, const TrainConfig& train_config, const EpochCallback& on_epoch = {});

struct Prediction {
  int label = 0;
  std::array<double, 2> probabilities{};
  std::vector<float> pooled;
};

/// Eval-mode prediction; ties go to label 0.
Prediction predict(const TrainedModel& model, const EmbeddingTensor& x);

extern template struct BasicModelParams<float>;
extern template struct BasicModelParams<double>;

}  // namespace nlskit
