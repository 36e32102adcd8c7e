#include "nlskit/classifier.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "nlskit/error.hpp"
#include "nlskit/random.hpp"

namespace nlskit {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using ConstRowMap = Eigen::Map<const RowVec<S>>;
template <typename S>
using RowMap = Eigen::Map<RowVec<S>>;

// Block layout: 0 layer_logits, 1+2k / 2+2k conv k weight / bias, then fc1, fc2.
std::size_t conv_weight_index(std::size_t k) { return 1 + 2 * k; }
std::size_t fc1_weight_index(const ModelConfig& c) { return 1 + 2 * std::size_t{c.conv_layers}; }
std::size_t fc2_weight_index(const ModelConfig& c) { return 3 + 2 * std::size_t{c.conv_layers}; }

// Products read an owned, Eigen-aligned copy. Vectorised kernels over a Map
// pick their scalar prologue from the address, which would make results
// depend on where the allocator placed the vector.
template <typename S>
Mat<S> as_matrix(const ParamBlock<S>& b) {
  return ConstMatMap<S>(b.values.data(), b.rows, b.cols);
}

template <typename S>
ConstRowMap<S> as_row(const ParamBlock<S>& b) {
  return ConstRowMap<S>(b.values.data(), static_cast<Eigen::Index>(b.values.size()));
}

template <typename S>
MatMap<S> as_matrix(ParamBlock<S>& b) {
  return MatMap<S>(b.values.data(), b.rows, b.cols);
}

template <typename S>
RowMap<S> as_row(ParamBlock<S>& b) {
  return RowMap<S>(b.values.data(), static_cast<Eigen::Index>(b.values.size()));
}

// Counter-based stream for dropout masks; cheap to seed per item.
class MaskStream {
 public:
  explicit MaskStream(std::uint64_t seed) : state_(seed) {}

  double uniform() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

void check_shape(const ModelConfig& config, const EmbeddingTensor& x) {
  if (x.layers() != config.input_layers || x.dim() != config.input_dim) {
    throw DimensionError("embedding shape (L=" + std::to_string(x.layers()) + ", D=" + std::to_string(x.dim()) +
                         ") does not match model (L=" + std::to_string(config.input_layers) +
                         ", D=" + std::to_string(config.input_dim) + ")");
  }
}

template <typename S>
void check_params(const BasicModelParams<S>& params, const ModelConfig& config) {
  const auto expected = BasicModelParams<S>::zeros(config);
  if (params.blocks.size() != expected.blocks.size())
    throw DimensionError("parameter block count does not match model config");
  for (std::size_t i = 0; i < expected.blocks.size(); ++i) {
    const auto& a = params.blocks[i];
    const auto& b = expected.blocks[i];
    if (a.rows != b.rows || a.cols != b.cols || a.values.size() != b.values.size())
      throw DimensionError("parameter block " + b.name + " has the wrong shape");
  }
}

template <typename S>
std::vector<S> softmax(std::span<const S> z) {
  std::vector<S> out(z.size());
  const S top = *std::max_element(z.begin(), z.end());
  S total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (out[i] = std::exp(z[i] - top));
  for (auto& v : out) v /= total;
  return out;
}

// Cached activations of one batched pass; frames of all items are stacked.
template <typename S>
struct Pass {
  std::vector<Eigen::Index> offsets;  // item i owns rows [offsets[i], offsets[i+1])
  std::vector<S> layer_weights;
  std::vector<Mat<S>> inputs;  // input of conv k; inputs[0] is the layer-weighted frames
  std::vector<Mat<S>> gates;   // d out / d pre-activation of conv k (ReLU x dropout scale)
  Mat<S> conv_out;             // output of the last convolution
  Mat<S> pooled;               // batch x C
  Mat<S> hidden_pre;           // batch x H
  Mat<S> hidden;               // batch x H
  Mat<S> logits;               // batch x classes
};

template <typename S>
Pass<S> run_forward(const BasicModelParams<S>& params, const ModelConfig& config,
                    std::span<const EmbeddingTensor* const> xs, std::span<const std::uint64_t> dropout_seeds,
                    bool train_mode) {
  Pass<S> pass;
  const auto batch = static_cast<Eigen::Index>(xs.size());
  const Eigen::Index dim = config.input_dim;

  pass.offsets.assign(xs.size() + 1, 0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_shape(config, *xs[i]);
    pass.offsets[i + 1] = pass.offsets[i] + xs[i]->frames();
  }
  const Eigen::Index rows = pass.offsets.back();

  pass.layer_weights = params.layer_weights();
  Mat<S> h = Mat<S>::Zero(rows, dim);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& x = *xs[i];
    auto block = h.middleRows(pass.offsets[i], x.frames());
    for (std::uint32_t l = 0; l < x.layers(); ++l) {
      const auto layer = x.layer(l);
      block += pass.layer_weights[l] *
               Eigen::Map<const Mat<float>>(layer.data(), x.frames(), dim).template cast<S>();
    }
  }

  const bool dropout = train_mode && config.dropout_p > 0.0f;
  const S keep_scale = S(1) / (S(1) - S(config.dropout_p));
  for (std::uint32_t k = 0; k < config.conv_layers; ++k) {
    const auto w = as_matrix(params.blocks[conv_weight_index(k)]);
    const auto b = as_row(params.blocks[conv_weight_index(k) + 1]);
    Mat<S> pre = h * w.transpose();
    pre.rowwise() += b;
    Mat<S> gate = (pre.array() > S(0)).template cast<S>();
    if (dropout) {
      for (std::size_t i = 0; i < xs.size(); ++i) {
        MaskStream stream(derive_seed(dropout_seeds[i], {k}));
        for (Eigen::Index r = pass.offsets[i]; r < pass.offsets[i + 1]; ++r)
          for (Eigen::Index c = 0; c < gate.cols(); ++c)
            gate(r, c) *= stream.uniform() < config.dropout_p ? S(0) : keep_scale;
      }
    }
    pass.inputs.push_back(std::move(h));
    h = pre.cwiseProduct(gate);
    pass.gates.push_back(std::move(gate));
  }
  pass.conv_out = std::move(h);

  pass.pooled.resize(batch, config.conv_channels);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto n = pass.offsets[i + 1] - pass.offsets[i];
    // Accumulate in double so that frame order barely moves the float mean.
    const Mat<double> frames = pass.conv_out.middleRows(pass.offsets[i], n).template cast<double>();
    const RowVec<double> total = frames.colwise().sum();
    pass.pooled.row(i) = (total / static_cast<double>(n)).template cast<S>();
  }

  const auto fc1 = fc1_weight_index(config);
  pass.hidden_pre = pass.pooled * as_matrix(params.blocks[fc1]).transpose();
  pass.hidden_pre.rowwise() += as_row(params.blocks[fc1 + 1]);
  pass.hidden = pass.hidden_pre.cwiseMax(S(0));

  const auto fc2 = fc2_weight_index(config);
  pass.logits = pass.hidden * as_matrix(params.blocks[fc2]).transpose();
  pass.logits.rowwise() += as_row(params.blocks[fc2 + 1]);
  return pass;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (input_layers < 1 || input_dim < 1) throw ArgumentError("model input layers and dim must be >= 1");
  if (conv_channels < 1 || conv_layers < 1 || fc_hidden < 1) throw ArgumentError("model widths must be >= 1");
  if (conv_kernel != 1) throw ArgumentError("only kernel size 1 convolutions are supported");
  if (n_classes != 2) throw ArgumentError("the head has exactly two outputs");
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) throw ArgumentError("dropout_p must be in [0, 1)");
}

template <typename S>
BasicModelParams<S> BasicModelParams<S>::zeros(const ModelConfig& config) {
  config.validate();
  BasicModelParams p;
  auto add = [&](std::string name, std::uint32_t rows, std::uint32_t cols) {
    p.blocks.push_back({std::move(name), rows, cols, std::vector<S>(std::size_t{rows} * cols, S(0))});
  };
  add("layer_logits", config.input_layers, 1);
  std::uint32_t in = config.input_dim;
  for (std::uint32_t k = 0; k < config.conv_layers; ++k) {
    const auto prefix = "conv" + std::to_string(k + 1);
    add(prefix + ".weight", config.conv_channels, in * config.conv_kernel);
    add(prefix + ".bias", config.conv_channels, 1);
    in = config.conv_channels;
  }
  add("fc1.weight", config.fc_hidden, config.conv_channels);
  add("fc1.bias", config.fc_hidden, 1);
  add("fc2.weight", config.n_classes, config.fc_hidden);
  add("fc2.bias", config.n_classes, 1);
  return p;
}

template <typename S>
BasicModelParams<S> BasicModelParams<S>::initialize(const ModelConfig& config, std::uint64_t seed) {
  auto p = zeros(config);
  Rng rng(seed);
  for (auto& b : p.blocks) {
    if (!b.name.ends_with(".weight")) continue;
    const double bound = std::sqrt(1.0 / b.cols);
    for (auto& v : b.values) v = static_cast<S>(rng.uniform(-bound, bound));
  }
  return p;
}

template <typename S>
std::size_t BasicModelParams<S>::size() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.values.size();
  return n;
}

template <typename S>
bool BasicModelParams<S>::all_finite() const {
  for (const auto& b : blocks)
    for (auto v : b.values)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename S>
std::vector<S> BasicModelParams<S>::layer_weights() const {
  return softmax<S>(layer_logits().values);
}

template struct BasicModelParams<float>;
template struct BasicModelParams<double>;

template <typename S>
ForwardOutput<S> forward(const BasicModelParams<S>& params, const ModelConfig& config, const EmbeddingTensor& x,
                         bool train_mode, std::uint64_t dropout_seed) {
  check_params(params, config);
  const EmbeddingTensor* xs[] = {&x};
  const std::uint64_t seeds[] = {dropout_seed};
  const auto pass = run_forward<S>(params, config, xs, seeds, train_mode);
  ForwardOutput<S> out;
  out.logits.assign(pass.logits.data(), pass.logits.data() + pass.logits.size());
  out.pooled.assign(pass.pooled.data(), pass.pooled.data() + pass.pooled.size());
  return out;
}

template <typename S>
std::vector<S> forward_batch(const BasicModelParams<S>& params, const ModelConfig& config,
                             std::span<const EmbeddingTensor* const> inputs) {
  check_params(params, config);
  constexpr std::size_t kChunk = 256;
  std::vector<S> logits;
  logits.reserve(inputs.size() * config.n_classes);
  const std::vector<std::uint64_t> seeds(std::min(kChunk, inputs.size()), 0);
  for (std::size_t begin = 0; begin < inputs.size(); begin += kChunk) {
    const auto n = std::min(kChunk, inputs.size() - begin);
    const auto pass = run_forward<S>(params, config, inputs.subspan(begin, n), std::span(seeds).first(n), false);
    logits.insert(logits.end(), pass.logits.data(), pass.logits.data() + pass.logits.size());
  }
  return logits;
}

std::array<double, 2> class_weights(std::span<const int> labels) {
  std::array<std::size_t, 2> counts{};
  for (int y : labels) {
    if (y != 0 && y != 1) throw ArgumentError("labels must be 0 or 1");
    ++counts[static_cast<std::size_t>(y)];
  }
  if (counts[0] == 0 || counts[1] == 0)
    throw WeightError("class " + std::to_string(counts[0] == 0 ? 0 : 1) +
                      " is absent from the training split; class weights are undefined");
  const double total = static_cast<double>(labels.size());
  return {total / (2.0 * static_cast<double>(counts[0])), total / (2.0 * static_cast<double>(counts[1]))};
}

template <typename S>
S loss_weighted_ce(std::span<const S> logits, std::span<const int> labels, const std::array<double, 2>& weights) {
  if (logits.size() != labels.size() * 2) throw DimensionError("expected two logits per label");
  if (labels.empty()) throw ArgumentError("empty batch");
  if (!(weights[0] > 0.0) || !(weights[1] > 0.0)) throw ArgumentError("class weights must be positive");
  S total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const S a = logits[2 * i], b = logits[2 * i + 1];
    const S top = std::max(a, b);
    const S lse = top + std::log(std::exp(a - top) + std::exp(b - top));
    const int y = labels[i];
    if (y != 0 && y != 1) throw ArgumentError("labels must be 0 or 1");
    total += static_cast<S>(weights[static_cast<std::size_t>(y)]) * (lse - logits[2 * i + y]);
  }
  return total / static_cast<S>(labels.size());
}

template <typename S>
LossAndGradient<S> backward(const BasicModelParams<S>& params, const ModelConfig& config,
                            std::span<const Example> batch, const std::array<double, 2>& weights, bool train_mode) {
  check_params(params, config);
  if (batch.empty()) throw ArgumentError("empty batch");

  std::vector<const EmbeddingTensor*> xs;
  std::vector<std::uint64_t> seeds;
  std::vector<int> labels;
  for (const auto& e : batch) {
    xs.push_back(e.x);
    seeds.push_back(e.dropout_seed);
    labels.push_back(e.label);
  }
  const auto pass = run_forward<S>(params, config, xs, seeds, train_mode);

  LossAndGradient<S> out;
  out.logits.assign(pass.logits.data(), pass.logits.data() + pass.logits.size());
  out.loss = loss_weighted_ce<S>(out.logits, labels, weights);
  out.gradient = BasicModelParams<S>::zeros(config);
  auto& grad = out.gradient.blocks;

  const auto n = static_cast<Eigen::Index>(batch.size());
  Mat<S> d_logits(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S a = pass.logits(i, 0), b = pass.logits(i, 1);
    const S top = std::max(a, b);
    const S ea = std::exp(a - top), eb = std::exp(b - top);
    const S scale = static_cast<S>(weights[static_cast<std::size_t>(labels[i])]) / static_cast<S>(n);
    d_logits(i, 0) = scale * (ea / (ea + eb) - (labels[i] == 0 ? S(1) : S(0)));
    d_logits(i, 1) = scale * (eb / (ea + eb) - (labels[i] == 1 ? S(1) : S(0)));
  }

  const auto fc2 = fc2_weight_index(config);
  as_matrix(grad[fc2]) = d_logits.transpose() * pass.hidden;
  as_row(grad[fc2 + 1]) = RowVec<S>(d_logits.colwise().sum());
  Mat<S> d_hidden = d_logits * as_matrix(params.blocks[fc2]);
  d_hidden = d_hidden.cwiseProduct((pass.hidden_pre.array() > S(0)).template cast<S>().matrix());

  const auto fc1 = fc1_weight_index(config);
  as_matrix(grad[fc1]) = d_hidden.transpose() * pass.pooled;
  as_row(grad[fc1 + 1]) = RowVec<S>(d_hidden.colwise().sum());
  const Mat<S> d_pooled = d_hidden * as_matrix(params.blocks[fc1]);

  Mat<S> d_out(pass.conv_out.rows(), pass.conv_out.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto frames = pass.offsets[i + 1] - pass.offsets[i];
    d_out.middleRows(pass.offsets[i], frames).rowwise() = d_pooled.row(i) / S(frames);
  }

  for (std::uint32_t k = config.conv_layers; k-- > 0;) {
    const Mat<S> d_pre = d_out.cwiseProduct(pass.gates[k]);
    as_matrix(grad[conv_weight_index(k)]) = d_pre.transpose() * pass.inputs[k];
    as_row(grad[conv_weight_index(k) + 1]) = RowVec<S>(d_pre.colwise().sum());
    d_out = d_pre * as_matrix(params.blocks[conv_weight_index(k)]);
  }

  // d_out now holds d loss / d (layer-weighted frames).
  const auto& w = pass.layer_weights;
  std::vector<S> d_weight(w.size(), S(0));
  const Eigen::Index dim = config.input_dim;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& x = *xs[i];
    const auto block = d_out.middleRows(pass.offsets[i], x.frames());
    for (std::uint32_t l = 0; l < x.layers(); ++l) {
      const auto layer = x.layer(l);
      const Mat<S> frames = Eigen::Map<const Mat<float>>(layer.data(), x.frames(), dim).template cast<S>();
      d_weight[l] += block.cwiseProduct(frames).sum();
    }
  }
  S dot = 0;
  for (std::size_t l = 0; l < w.size(); ++l) dot += w[l] * d_weight[l];
  for (std::size_t l = 0; l < w.size(); ++l) grad[0].values[l] = w[l] * (d_weight[l] - dot);
  return out;
}

template <typename S>
void adam_step(BasicModelParams<S>& params, const BasicModelParams<S>& gradient, AdamState<S>& state,
               std::uint64_t step, const TrainConfig& config) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (step < 1) throw ArgumentError("adam step index starts at 1");
  if (gradient.blocks.size() != params.blocks.size() || state.m.blocks.size() != params.blocks.size())
    throw DimensionError("adam: parameter, gradient and state layouts differ");

  for (std::size_t b = 0; b < gradient.blocks.size(); ++b) {
    const auto& g = gradient.blocks[b];
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      if (!std::isfinite(g.values[i]))
        throw TrainingError("non-finite gradient in block " + g.name + " at element " + std::to_string(i));
    }
  }

  const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& theta = params.blocks[b].values;
    const auto& g = gradient.blocks[b].values;
    auto& m = state.m.blocks[b].values;
    auto& v = state.v.blocks[b].values;
    if (theta.size() != g.size() || m.size() != g.size() || v.size() != g.size())
      throw DimensionError("adam: block " + params.blocks[b].name + " sizes differ");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + config.weight_decay * static_cast<double>(theta[i]);
      const double mi = kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * gi;
      const double vi = kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      theta[i] = static_cast<S>(static_cast<double>(theta[i]) - config.lr * m_hat / (std::sqrt(v_hat) + kEps));
    }
  }
}

#define NLSKIT_INSTANTIATE(S)                                                                                      \
  template ForwardOutput<S> forward<S>(const BasicModelParams<S>&, const ModelConfig&, const EmbeddingTensor&, bool, \
                                       std::uint64_t);                                                            \
  template std::vector<S> forward_batch<S>(const BasicModelParams<S>&, const ModelConfig&,                        \
                                           std::span<const EmbeddingTensor* const>);                              \
  template S loss_weighted_ce<S>(std::span<const S>, std::span<const int>, const std::array<double, 2>&);         \
  template LossAndGradient<S> backward<S>(const BasicModelParams<S>&, const ModelConfig&, std::span<const Example>, \
                                          const std::array<double, 2>&, bool);                                    \
  template void adam_step<S>(BasicModelParams<S>&, const BasicModelParams<S>&, AdamState<S>&, std::uint64_t,       \
                             const TrainConfig&);

NLSKIT_INSTANTIATE(float)
NLSKIT_INSTANTIATE(double)

#undef NLSKIT_INSTANTIATE

}  // namespace nlskit
