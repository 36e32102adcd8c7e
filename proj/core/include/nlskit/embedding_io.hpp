#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nlskit/corpus.hpp"

namespace nlskit {

/// Layer-major hidden states of one utterance: value (l, t, d) lives at
/// index (l * frames + t) * dim + d.
class EmbeddingTensor {
 public:
  EmbeddingTensor() = default;
  /// Zero-filled tensor; every extent must be >= 1.
  EmbeddingTensor(std::uint32_t layers, std::uint32_t frames, std::uint32_t dim);
  /// Takes ownership of `data`; size must equal layers * frames * dim.
  EmbeddingTensor(std::uint32_t layers, std::uint32_t frames, std::uint32_t dim, std::vector<float> data);

  std::uint32_t layers() const { return layers_; }
  std::uint32_t frames() const { return frames_; }
  std::uint32_t dim() const { return dim_; }

  float& at(std::uint32_t l, std::uint32_t t, std::uint32_t d) { return data_[(std::size_t{l} * frames_ + t) * dim_ + d]; }
  float at(std::uint32_t l, std::uint32_t t, std::uint32_t d) const {
    return data_[(std::size_t{l} * frames_ + t) * dim_ + d];
  }

  /// One layer as a frames x dim row-major block.
  std::span<const float> layer(std::uint32_t l) const {
    return {data_.data() + std::size_t{l} * frames_ * dim_, std::size_t{frames_} * dim_};
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const EmbeddingTensor&, const EmbeddingTensor&) = default;

 private:
  std::uint32_t layers_ = 0;
  std::uint32_t frames_ = 0;
  std::uint32_t dim_ = 0;
  std::vector<float> data_;
};

/// NLSEMB v1: "NLSEMB01", u32 LE layers, frames, dim, dtype (0 = f32 LE),
/// then the payload. Throws ValueError for non-finite data and IoError when
/// the file cannot be written.
void write_embedding(const EmbeddingTensor& tensor, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_embedding(const EmbeddingTensor& tensor);

/// Throws FormatError (magic, dtype, zero extent), LengthError (payload size
/// disagrees with the header) or ValueError (non-finite values).
EmbeddingTensor read_embedding(const std::filesystem::path& path);
EmbeddingTensor decode_embedding(std::span<const std::uint8_t> bytes, const std::string& source_name = "<memory>");

struct EmbeddingHeader {
  std::uint32_t layers;
  std::uint32_t frames;
  std::uint32_t dim;
  std::uint32_t dtype;
};

/// Only the 24-byte header, without touching the payload.
EmbeddingHeader read_embedding_header(const std::filesystem::path& path);

struct SyntheticEmbeddingOptions {
  std::uint64_t seed = 0;
  std::uint32_t dim = 16;
  std::uint32_t layers = 3;
  double fps = 50.0;
  double separation = 4.0;
  double max_duration_s = 3.0;
  double min_duration_s = 0.1;
};

/// Frame count for a synthetic utterance: max(1, round(min(duration, cap) * fps)).
std::uint32_t synthetic_frame_count(double duration_s, double fps, double max_duration_s = 3.0);

/// Draws the tensor for one utterance: frames ~ N(separation * u_c, I) in
/// every layer, where u_c is the unit direction of the utterance's
/// (speaker, tag) class. Deterministic in (options.seed, utterance_id).
EmbeddingTensor synthesize_utterance_embedding(const Utterance& utterance, const SyntheticEmbeddingOptions& options);

/// Writes one NLSEMB file per utterance that enters either task into
/// `out_dir` and returns the corpus with `embedding_path` set (relative to
/// `out_dir`). Other utterances keep an empty path.
Corpus synthesize_embeddings(const Corpus& corpus, const SyntheticEmbeddingOptions& options,
                             const std::filesystem::path& out_dir);

/// Loads tensors for utterances on demand, resolving relative paths against
/// `base_dir`. After `preload`, concurrent `get` calls on preloaded ids are
/// safe.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path base_dir = {}) : base_dir_(std::move(base_dir)) {}

  /// Throws DataError naming the utterance or path when no tensor is available.
  const EmbeddingTensor& get(const Utterance& utterance);
  const EmbeddingTensor& get(const Utterance& utterance) const;

  void insert(const std::string& utterance_id, EmbeddingTensor tensor);
  void preload(const Corpus& corpus, std::span<const TaskItem> items);

  bool contains(const std::string& utterance_id) const { return tensors_.count(utterance_id) > 0; }
  std::size_t size() const { return tensors_.size(); }

 private:
  std::filesystem::path resolve(const Utterance& utterance) const;

  std::filesystem::path base_dir_;
  std::map<std::string, EmbeddingTensor, std::less<>> tensors_;
};

}  // namespace nlskit
