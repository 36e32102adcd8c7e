#include "nlskit/embedding_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "nlskit/error.hpp"
#include "nlskit/random.hpp"
#include "text_io.hpp"

namespace nlskit {

namespace {

constexpr std::array<char, 8> kMagic{'N', 'L', 'S', 'E', 'M', 'B', '0', '1'};
constexpr std::size_t kHeaderBytes = 8 + 4 * 4;
constexpr std::uint32_t kDtypeF32 = 0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

std::size_t checked_volume(std::uint32_t l, std::uint32_t t, std::uint32_t d) {
  const auto volume = static_cast<unsigned __int128>(l) * t * d;
  if (volume > (std::size_t{1} << 40)) throw ArgumentError("embedding tensor too large");
  return static_cast<std::size_t>(volume);
}

EmbeddingHeader parse_header(const std::uint8_t* bytes, std::size_t size, const std::string& source) {
  if (size < kMagic.size() || std::memcmp(bytes, kMagic.data(), kMagic.size()) != 0)
    throw FormatError(source + ": bad magic, not an NLSEMB01 file");
  if (size < kHeaderBytes) throw LengthError(source + ": truncated header");
  EmbeddingHeader h{get_u32(bytes + 8), get_u32(bytes + 12), get_u32(bytes + 16), get_u32(bytes + 20)};
  if (h.dtype != kDtypeF32) throw FormatError(source + ": unsupported dtype " + std::to_string(h.dtype));
  if (h.layers == 0 || h.frames == 0 || h.dim == 0) throw FormatError(source + ": zero extent in header");
  return h;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Synthetic classes: the six (speaker, tag) pairs that enter a task.
int synthetic_class(const Utterance& u) {
  const int speaker = u.speaker == SpeakerRole::Child ? 0 : 1;
  switch (u.tag) {
    case VocalTag::Intelligible: return speaker * 3 + 0;
    case VocalTag::Unintelligible: return speaker * 3 + 1;
    case VocalTag::Vocalization: return speaker * 3 + 2;
    default: return -1;
  }
}

constexpr int kSyntheticClasses = 6;

// Unit direction of a class: the standard basis when dim allows six
// orthonormal directions, otherwise six evenly spaced unit vectors in the
// first coordinate plane.
std::vector<double> class_direction(int cls, std::uint32_t dim) {
  std::vector<double> u(dim, 0.0);
  if (cls < 0) return u;
  if (dim >= kSyntheticClasses) {
    u[static_cast<std::size_t>(cls)] = 1.0;
  } else {
    const double angle = 2.0 * std::numbers::pi * cls / kSyntheticClasses;
    u[0] = std::cos(angle);
    u[1] = std::sin(angle);
  }
  return u;
}

std::string embedding_file_name(const std::string& utterance_id) {
  std::string name = utterance_id;
  std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
  return name + ".nlsemb";
}

}  // namespace

EmbeddingTensor::EmbeddingTensor(std::uint32_t layers, std::uint32_t frames, std::uint32_t dim)
    : EmbeddingTensor(layers, frames, dim, std::vector<float>(checked_volume(layers, frames, dim), 0.0f)) {}

EmbeddingTensor::EmbeddingTensor(std::uint32_t layers, std::uint32_t frames, std::uint32_t dim,
                                 std::vector<float> data)
    : layers_(layers), frames_(frames), dim_(dim), data_(std::move(data)) {
  if (layers == 0 || frames == 0 || dim == 0) throw ArgumentError("embedding extents must be >= 1");
  if (data_.size() != checked_volume(layers, frames, dim))
    throw DimensionError("embedding data length " + std::to_string(data_.size()) + " != L*T*D");
}

bool EmbeddingTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingTensor& tensor) {
  if (tensor.layers() == 0) throw ArgumentError("cannot encode an empty tensor");
  if (!tensor.all_finite()) throw ValueError("embedding contains non-finite values");
  std::vector<std::uint8_t> out(kMagic.size());
  out.reserve(kHeaderBytes + tensor.data().size() * 4);
  std::copy(kMagic.begin(), kMagic.end(), out.begin());
  put_u32(out, tensor.layers());
  put_u32(out, tensor.frames());
  put_u32(out, tensor.dim());
  put_u32(out, kDtypeF32);
  for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

void write_embedding(const EmbeddingTensor& tensor, const std::filesystem::path& path) {
  const auto bytes = encode_embedding(tensor);
  auto out = detail::open_output(path, true);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingTensor decode_embedding(std::span<const std::uint8_t> bytes, const std::string& source) {
  const auto h = parse_header(bytes.data(), bytes.size(), source);
  const std::size_t volume = checked_volume(h.layers, h.frames, h.dim);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload != volume * 4) {
    throw LengthError(source + ": header announces " + std::to_string(volume * 4) + " payload bytes, found " +
                      std::to_string(payload));
  }
  std::vector<float> data(volume);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < volume; ++i, p += 4) {
    data[i] = std::bit_cast<float>(get_u32(p));
    if (!std::isfinite(data[i])) throw ValueError(source + ": non-finite value at index " + std::to_string(i));
  }
  return EmbeddingTensor(h.layers, h.frames, h.dim, std::move(data));
}

EmbeddingTensor read_embedding(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_embedding(bytes, path.string());
}

EmbeddingHeader read_embedding_header(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::array<std::uint8_t, kHeaderBytes> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  return parse_header(buf.data(), static_cast<std::size_t>(in.gcount()), path.string());
}

// ---------------------------------------------------------------------------
// Synthetic embeddings

std::uint32_t synthetic_frame_count(double duration_s, double fps, double max_duration_s) {
  const double capped = std::min(duration_s, max_duration_s);
  return static_cast<std::uint32_t>(std::max(1.0, std::round(capped * fps)));
}

EmbeddingTensor synthesize_utterance_embedding(const Utterance& utterance, const SyntheticEmbeddingOptions& options) {
  if (options.dim < 2) throw ArgumentError("synthetic embeddings need dim >= 2");
  if (options.layers < 1) throw ArgumentError("synthetic embeddings need layers >= 1");
  if (!(options.separation >= 0.0)) throw ArgumentError("separation must be >= 0");
  if (!(options.fps > 0.0)) throw ArgumentError("fps must be > 0");

  const auto frames = synthetic_frame_count(utterance.duration_s(), options.fps, options.max_duration_s);
  const auto direction = class_direction(synthetic_class(utterance), options.dim);
  EmbeddingTensor tensor(options.layers, frames, options.dim);
  Rng rng(derive_seed(options.seed, {fnv1a(utterance.utterance_id)}));
  auto data = tensor.data();
  std::size_t i = 0;
  for (std::uint32_t l = 0; l < options.layers; ++l)
    for (std::uint32_t t = 0; t < frames; ++t)
      for (std::uint32_t d = 0; d < options.dim; ++d)
        data[i++] = static_cast<float>(options.separation * direction[d] + rng.normal());
  return tensor;
}

Corpus synthesize_embeddings(const Corpus& corpus, const SyntheticEmbeddingOptions& options,
                             const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto utterances = corpus.utterances();
  for (auto& u : utterances) {
    if (!task_label(u, TaskKind::ChildAdult, options.min_duration_s)) {
      u.embedding_path.clear();
      continue;
    }
    const auto name = embedding_file_name(u.utterance_id);
    write_embedding(synthesize_utterance_embedding(u, options), out_dir / name);
    u.embedding_path = name;
  }
  return Corpus(corpus.sessions(), std::move(utterances));
}

// ---------------------------------------------------------------------------
// Cache

std::filesystem::path EmbeddingCache::resolve(const Utterance& u) const {
  if (!u.has_embedding()) throw DataError("utterance " + u.utterance_id + " has no embedding_path");
  std::filesystem::path p(u.embedding_path);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

const EmbeddingTensor& EmbeddingCache::get(const Utterance& u) const {
  const auto it = tensors_.find(u.utterance_id);
  if (it == tensors_.end()) throw DataError("embedding for utterance " + u.utterance_id + " not loaded");
  return it->second;
}

const EmbeddingTensor& EmbeddingCache::get(const Utterance& u) {
  if (const auto it = tensors_.find(u.utterance_id); it != tensors_.end()) return it->second;
  const auto path = resolve(u);
  if (!std::filesystem::exists(path)) throw IoError("missing embedding file " + path.string());
  return tensors_.emplace(u.utterance_id, read_embedding(path)).first->second;
}

void EmbeddingCache::insert(const std::string& utterance_id, EmbeddingTensor tensor) {
  tensors_.insert_or_assign(utterance_id, std::move(tensor));
}

void EmbeddingCache::preload(const Corpus& corpus, std::span<const TaskItem> items) {
  for (const auto& item : items) get(corpus.utterances()[item.utterance_index]);
}

}  // namespace nlskit
