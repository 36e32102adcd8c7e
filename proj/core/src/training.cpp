#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nlskit/classifier.hpp"
#include "nlskit/error.hpp"
#include "nlskit/metrics.hpp"
#include "nlskit/random.hpp"

namespace nlskit {

namespace {

// Stream tags for derive_seed so that init, split, shuffling and dropout
// never share randomness.
enum class Stream : std::uint64_t { Split = 1, Init = 2, Shuffle = 3, Dropout = 4 };

std::uint64_t stream_seed(std::uint64_t base, Stream s, std::initializer_list<std::uint64_t> rest = {}) {
  std::uint64_t seed = derive_seed(base, {static_cast<std::uint64_t>(s)});
  return rest.size() == 0 ? seed : derive_seed(seed, rest);
}

struct EvalResult {
  double loss = 0.0;
  double f1 = 0.0;
};

EvalResult evaluate(const ModelParams& params, const ModelConfig& config,
                    const std::vector<const EmbeddingTensor*>& inputs, const std::vector<int>& labels,
                    const std::array<double, 2>& weights) {
  const auto logits = forward_batch<float>(params, config, inputs);
  std::vector<double> logits64(logits.begin(), logits.end());
  std::vector<int> predicted(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) predicted[i] = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
  return {loss_weighted_ce<double>(logits64, labels, weights), f1_macro(labels, predicted)};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ArgumentError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (max_epochs < 1) throw ArgumentError("max_epochs must be >= 1");
  if (patience < 1) throw ArgumentError("patience must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ArgumentError("val_fraction must be in [0, 1)");
}

TrainedModel train(const Corpus& corpus, std::span<const TaskItem> items, const EmbeddingCache& embeddings,
                   ModelConfig config, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  if (items.empty()) throw TrainingError("cannot train on an empty dataset");

  std::vector<const EmbeddingTensor*> inputs;
  std::vector<int> labels;
  inputs.reserve(items.size());
  for (const auto& item : items) {
    inputs.push_back(&embeddings.get(corpus.utterances().at(item.utterance_index)));
    labels.push_back(item.label);
  }
  if (std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels.front(); }))
    throw TrainingError("dataset contains a single class; nothing to discriminate");

  if (config.input_layers == 0) config.input_layers = inputs.front()->layers();
  if (config.input_dim == 0) config.input_dim = inputs.front()->dim();
  config.validate();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i]->layers() != config.input_layers || inputs[i]->dim() != config.input_dim)
      throw DataError("embedding of utterance " + corpus.utterances()[items[i].utterance_index].utterance_id +
                    " does not match the model's (L, D)");
  }

  // Unstratified utterance-level split: the first n_val of a seeded permutation.
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(stream_seed(tc.seed, Stream::Split));
  split_rng.shuffle(std::span<std::size_t>(order));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(items.size()) * tc.val_fraction));
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<int> train_labels, val_labels;
  std::vector<const EmbeddingTensor*> val_inputs;
  for (auto i : train_idx) train_labels.push_back(labels[i]);
  for (auto i : val_idx) {
    val_labels.push_back(labels[i]);
    val_inputs.push_back(inputs[i]);
  }
  const auto weights = class_weights(train_labels);

  TrainedModel model;
  model.config = config;
  model.params = ModelParams::initialize(config, stream_seed(tc.seed, Stream::Init));
  auto state = AdamState<float>::zeros_like(model.params);

  ModelParams best = model.params;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    Rng shuffle_rng(stream_seed(tc.seed, Stream::Shuffle, {static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(std::span<std::size_t>(train_idx));

    double loss_sum = 0.0;
    std::vector<Example> batch;
    std::uint64_t batch_no = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += tc.batch_size, ++batch_no) {
      const auto end = std::min(train_idx.size(), begin + tc.batch_size);
      batch.clear();
      for (std::size_t j = begin; j < end; ++j) {
        const auto i = train_idx[j];
        batch.push_back({inputs[i], labels[i],
                         stream_seed(tc.seed, Stream::Dropout,
                                     {static_cast<std::uint64_t>(epoch), batch_no, static_cast<std::uint64_t>(j - begin)})});
      }
      const auto result = backward<float>(model.params, config, batch, weights, true);
      adam_step(model.params, result.gradient, state, ++step, tc);
      loss_sum += static_cast<double>(result.loss) * static_cast<double>(batch.size());
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_idx.size());
    if (n_val > 0) {
      const auto eval = evaluate(model.params, config, val_inputs, val_labels, weights);
      entry.val_loss = eval.loss;
      entry.val_f1 = eval.f1;
    } else {
      // No validation items: monitor the training loss and report no F1.
      entry.val_loss = entry.train_loss;
      entry.val_f1 = 0.0;
    }
    if (!std::isfinite(entry.val_loss)) throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
    model.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_loss < best_loss) {
      best_loss = entry.val_loss;
      best = model.params;
      model.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }
  model.params = std::move(best);
  return model;
}

Prediction predict(const TrainedModel& model, const EmbeddingTensor& x) {
  const auto out = forward<float>(model.params, model.config, x, false, 0);
  Prediction p;
  const double a = out.logits[0], b = out.logits[1];
  const double top = std::max(a, b);
  const double ea = std::exp(a - top), eb = std::exp(b - top);
  p.probabilities = {ea / (ea + eb), eb / (ea + eb)};
  p.label = b > a ? 1 : 0;
  p.pooled = out.pooled;
  return p;
}

}  // namespace nlskit
