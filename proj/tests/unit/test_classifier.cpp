#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "nlskit/classifier.hpp"
#include "nlskit/corpus.hpp"
#include "nlskit/error.hpp"
#include "oracles.hpp"

using namespace nlskit;

namespace {

ModelConfig small_config(std::uint32_t layers = 3, std::uint32_t dim = 4) {
  ModelConfig c;
  c.input_layers = layers;
  c.input_dim = dim;
  c.conv_channels = 12;
  c.fc_hidden = 7;
  return c;
}

BasicModelParams<double> jittered(const ModelConfig& c, std::uint64_t seed) {
  auto p = BasicModelParams<double>::initialize(c, seed);
  std::mt19937_64 gen(seed + 1);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& b : p.blocks)
    if (b.cols == 1)
      for (auto& v : b.values) v = n(gen);
  return p;
}

}  // namespace

TEST_CASE("parameter layout") {
  ModelConfig c;
  c.input_layers = 13;
  c.input_dim = 768;
  const auto p = ModelParams::zeros(c);
  REQUIRE(p.blocks.size() == 1 + 2 * 3 + 4);
  CHECK(p.blocks[0].name == "layer_logits");
  CHECK(p.blocks[1].name == "conv1.weight");
  CHECK(p.blocks[1].rows == 256);
  CHECK(p.blocks[1].cols == 768);
  CHECK(p.blocks.back().name == "fc2.bias");
  const std::size_t expected = 13 + (256 * 768 + 256) + 2 * (256 * 256 + 256) + (256 * 256 + 256) + (2 * 256 + 2);
  CHECK(p.size() == expected);

  const auto init = ModelParams::initialize(c, 3);
  CHECK(init == ModelParams::initialize(c, 3));
  CHECK_FALSE(init == ModelParams::initialize(c, 4));
  const float bound = std::sqrt(1.0f / 768.0f);
  for (float v : init.blocks[1].values) CHECK(std::fabs(v) <= bound);
  for (float w : init.layer_weights()) CHECK(w == doctest::Approx(1.0 / 13));

  ModelConfig bad = c;
  bad.dropout_p = 1.0f;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.input_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("eval-mode forward agrees with the naive reference") {
  std::mt19937_64 gen(5);
  const auto c = small_config();
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = jittered(c, static_cast<std::uint64_t>(trial));
    const auto x = oracle::random_tensor(gen, 3, 1 + trial, 4);
    const auto want = oracle::reference_logits(p, c, x);
    const auto got = forward(p, c, x, false, 0);
    REQUIRE(got.logits.size() == 2);
    CHECK(got.pooled.size() == c.conv_channels);
    for (std::size_t k = 0; k < 2; ++k) CHECK(got.logits[k] == doctest::Approx(want[k]).epsilon(1e-12));

    const auto pf = p.cast<float>();
    const auto gf = forward(pf, c, x, false, 0);
    for (std::size_t k = 0; k < 2; ++k) CHECK(gf.logits[k] == doctest::Approx(want[k]).epsilon(1e-4));
  }
}

TEST_CASE("forward rejects mismatched shapes") {
  const auto c = small_config();
  const auto p = ModelParams::initialize(c, 1);
  CHECK_THROWS_AS(forward(p, c, EmbeddingTensor(2, 3, 4), false, 0), DimensionError);
  CHECK_THROWS_AS(forward(p, c, EmbeddingTensor(3, 3, 5), false, 0), DimensionError);
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = oracle::gradient_check(seed);
    CAPTURE(seed);
    CHECK(r.parameters > 200);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("eval-mode forward is invariant to frame order") {
  std::mt19937_64 gen(17);
  const auto c = small_config();
  const auto p = ModelParams::initialize(c, 2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = oracle::random_tensor(gen, 3, 9, 4);
    std::vector<std::uint32_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), gen);
    EmbeddingTensor y(3, 9, 4);
    for (std::uint32_t l = 0; l < 3; ++l)
      for (std::uint32_t t = 0; t < 9; ++t)
        for (std::uint32_t d = 0; d < 4; ++d) y.at(l, perm[t], d) = x.at(l, t, d);
    const auto a = forward(p, c, x, false, 0), b = forward(p, c, y, false, 0);
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(std::fabs(a.logits[k] - b.logits[k]) <= 1e-5 * std::max(1.0f, std::fabs(a.logits[k])));
  }
}

TEST_CASE("uniform layer weights reduce to the plain layer mean") {
  std::mt19937_64 gen(29);
  const auto c = small_config(4, 3);
  const auto p = jittered(c, 8);
  auto uniform = p;
  std::fill(uniform.blocks[0].values.begin(), uniform.blocks[0].values.end(), 0.7);

  const auto x = oracle::random_tensor(gen, 4, 6, 3);
  EmbeddingTensor mean(1, 6, 3);
  for (std::uint32_t t = 0; t < 6; ++t)
    for (std::uint32_t d = 0; d < 3; ++d) {
      double s = 0;
      for (std::uint32_t l = 0; l < 4; ++l) s += x.at(l, t, d);
      mean.at(0, t, d) = static_cast<float>(s / 4);
    }
  auto single = c;
  single.input_layers = 1;
  auto single_params = uniform;
  single_params.blocks[0].rows = 1;
  single_params.blocks[0].values = {0.0};

  const auto a = forward(uniform, c, x, false, 0);
  const auto b = forward(single_params, single, mean, false, 0);
  for (std::size_t k = 0; k < 2; ++k) CHECK(a.logits[k] == doctest::Approx(b.logits[k]).epsilon(1e-6));
}

TEST_CASE("dropout") {
  std::mt19937_64 gen(3);
  const auto c = small_config();
  const auto p = ModelParams::initialize(c, 9);
  const auto x = oracle::random_tensor(gen, 3, 5, 4);
  const auto eval = forward(p, c, x, false, 0);
  CHECK(forward(p, c, x, true, 11).pooled == forward(p, c, x, true, 11).pooled);
  CHECK_FALSE(forward(p, c, x, true, 11).pooled == forward(p, c, x, true, 12).pooled);
  CHECK_FALSE(forward(p, c, x, true, 11).pooled == eval.pooled);

  auto no_drop = c;
  no_drop.dropout_p = 0.0f;
  CHECK(forward(p, no_drop, x, true, 11).pooled == forward(p, no_drop, x, false, 0).pooled);
}

TEST_CASE("class weights and weighted cross-entropy") {
  const std::vector<int> labels{0, 0, 0, 1};
  const auto w = class_weights(labels);
  CHECK(w[0] == doctest::Approx(4.0 / 6.0));
  CHECK(w[1] == doctest::Approx(2.0));
  CHECK_THROWS_AS(class_weights(std::vector<int>{1, 1}), WeightError);

  const std::vector<double> logits{0.0, 0.0, 2.0, -1.0};
  const std::vector<int> y{1, 0};
  const double ce0 = std::log(2.0);
  const double ce1 = std::log(1.0 + std::exp(-3.0));
  const double want = (w[1] * ce0 + w[0] * ce1) / 2.0;
  CHECK(loss_weighted_ce<double>(logits, y, w) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("batched backward equals the mean of single-example losses") {
  std::mt19937_64 gen(41);
  const auto c = small_config();
  const auto p = jittered(c, 4);
  std::vector<EmbeddingTensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(oracle::random_tensor(gen, 3, 2 + i, 4));
  const std::vector<int> labels{0, 1, 1, 0};
  std::vector<Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({&xs[i], labels[i], 0});
  const std::array<double, 2> w{0.8, 1.3};
  const auto full = backward(p, c, batch, w, false);
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto ref = oracle::reference_logits(p, c, xs[i]);
    total += loss_weighted_ce<double>(ref, std::vector<int>{labels[i]}, w);
  }
  CHECK(full.loss == doctest::Approx(total / 4).epsilon(1e-12));

  std::vector<const EmbeddingTensor*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  const auto batched = forward_batch(p, c, ptrs);
  for (int i = 0; i < 4; ++i) {
    const auto single = forward(p, c, xs[i], false, 0);
    CHECK(batched[2 * i] == doctest::Approx(single.logits[0]).epsilon(1e-12));
    CHECK(batched[2 * i + 1] == doctest::Approx(single.logits[1]).epsilon(1e-12));
  }
}

TEST_CASE("Adam step") {
  ModelConfig c = small_config(1, 1);
  c.conv_channels = 1;
  c.fc_hidden = 1;
  c.conv_layers = 1;
  auto p = BasicModelParams<double>::zeros(c);
  p.blocks[1].values[0] = 0.5;
  auto g = BasicModelParams<double>::zeros(c);
  g.blocks[1].values[0] = 0.3;
  auto state = AdamState<double>::zeros_like(p);
  TrainConfig tc;
  tc.lr = 0.01;
  tc.weight_decay = 0.1;

  adam_step(p, g, state, 1, tc);
  // First bias-corrected step moves by lr * g / (|g| + eps) with g = 0.3 + 0.1 * 0.5.
  const double grad = 0.3 + 0.1 * 0.5;
  CHECK(p.blocks[1].values[0] == doctest::Approx(0.5 - 0.01 * grad / (grad + 1e-8)).epsilon(1e-12));
  CHECK(state.m.blocks[1].values[0] == doctest::Approx(0.1 * grad));
  CHECK(state.v.blocks[1].values[0] == doctest::Approx(0.001 * grad * grad));
  CHECK(p.blocks[0].values[0] == 0.0);

  g.blocks[2].values[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(p, g, state, 2, tc), doctest::Contains("conv1.bias"), TrainingError);
}

namespace {

struct ToyData {
  Corpus corpus;
  EmbeddingCache cache;
  std::vector<TaskItem> items;
};

ToyData toy_data(double separation, int n, std::uint64_t seed) {
  ToyData data;
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  std::vector<Utterance> utts;
  for (int i = 0; i < n; ++i) {
    const int label = i % 3 == 0 ? 1 : 0;
    const std::string id = "u" + std::to_string(i);
    utts.push_back({id, "s", label ? SpeakerRole::Child : SpeakerRole::Adult, VocalTag::Intelligible, i * 2.0,
                    i * 2.0 + 1.0, ""});
    EmbeddingTensor x(2, 3, 4);
    for (std::uint32_t l = 0; l < 2; ++l)
      for (std::uint32_t t = 0; t < 3; ++t)
        for (std::uint32_t d = 0; d < 4; ++d)
          x.at(l, t, d) = noise(gen) + (d == static_cast<std::uint32_t>(label) ? static_cast<float>(separation) : 0.0f);
    data.cache.insert(id, std::move(x));
    data.items.push_back({static_cast<std::size_t>(i), label});
  }
  data.corpus = Corpus({{"s", LanguageLevel::LL2, Gender::Male, 60, 1}}, utts);
  return data;
}

}  // namespace

TEST_CASE("training learns a separable problem and is deterministic") {
  const auto data = toy_data(4.0, 120, 1);
  ModelConfig c;
  c.conv_channels = 16;
  c.fc_hidden = 8;
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.max_epochs = 30;
  tc.batch_size = 16;
  tc.seed = 99;
  std::vector<EpochLog> seen;
  const auto model = train(data.corpus, data.items, data.cache, c, tc, [&](const EpochLog& e) { seen.push_back(e); });
  CHECK(model.config.input_layers == 2);
  CHECK(model.config.input_dim == 4);
  CHECK(seen == model.log);
  REQUIRE_FALSE(model.log.empty());
  CHECK(model.best_epoch >= 1);

  const auto best = std::min_element(model.log.begin(), model.log.end(),
                                     [](const EpochLog& a, const EpochLog& b) { return a.val_loss < b.val_loss; });
  CHECK(best->epoch == model.best_epoch);

  std::size_t correct = 0;
  for (const auto& item : data.items) {
    const auto& u = data.corpus.utterances()[item.utterance_index];
    const auto pred = predict(model, data.cache.get(u));
    CHECK(pred.probabilities[0] + pred.probabilities[1] == doctest::Approx(1.0));
    correct += pred.label == item.label;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(data.items.size()) > 0.95);

  const auto again = train(data.corpus, data.items, data.cache, c, tc);
  CHECK(again.log == model.log);
  CHECK(again.best_epoch == model.best_epoch);
  CHECK(again.params == model.params);
  CHECK(again == model);
}

TEST_CASE("early stopping halts once validation loss stops improving") {
  const auto data = toy_data(0.0, 60, 2);
  ModelConfig c;
  c.conv_channels = 8;
  c.fc_hidden = 4;
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.max_epochs = 40;
  tc.patience = 2;
  tc.batch_size = 8;
  const auto model = train(data.corpus, data.items, data.cache, c, tc);
  CHECK(static_cast<int>(model.log.size()) == std::min(40, model.best_epoch + 2));
}

TEST_CASE("training errors") {
  auto data = toy_data(1.0, 12, 3);
  std::vector<TaskItem> one_class;
  for (const auto& item : data.items)
    if (item.label == 0) one_class.push_back(item);
  ModelConfig c;
  CHECK_THROWS_AS(train(data.corpus, one_class, data.cache, c, TrainConfig{}), TrainingError);
  CHECK_THROWS_AS(train(data.corpus, std::vector<TaskItem>{}, data.cache, c, TrainConfig{}), TrainingError);
  TrainConfig bad;
  bad.val_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}
