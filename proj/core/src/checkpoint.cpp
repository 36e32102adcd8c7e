#include "nlskit/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <iterator>
#include <sstream>

#include "nlskit/error.hpp"
#include "text_io.hpp"

namespace nlskit {

namespace {

constexpr std::array<char, 8> kMagic{'N', 'L', 'S', 'M', 'D', 'L', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 64;
constexpr std::string_view kLogHeader = "epoch\ttrain_loss\tval_loss\tval_f1";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | std::uint64_t{u32()} << 32;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw LengthError(source_ + ": checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  return detail::format_fixed_min(v, 1);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model) {
  const auto& c = model.config;
  c.validate();
  const auto expected = ModelParams::zeros(c);
  if (model.params.blocks.size() != expected.blocks.size())
    throw DimensionError("checkpoint: parameter layout does not match config");

  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  w.u32(c.input_layers);
  w.u32(c.input_dim);
  w.u32(c.conv_channels);
  w.u32(c.conv_layers);
  w.u32(c.conv_kernel);
  w.u32(c.fc_hidden);
  w.u32(c.n_classes);
  w.f32(c.dropout_p);
  w.u32(static_cast<std::uint32_t>(model.best_epoch));
  const std::size_t offset_pos = w.out.size();
  w.u64(0);
  w.u64(0);

  for (std::size_t b = 0; b < expected.blocks.size(); ++b) {
    const auto& block = model.params.blocks[b];
    if (block.values.size() != expected.blocks[b].values.size())
      throw DimensionError("checkpoint: block " + expected.blocks[b].name + " has the wrong size");
    for (float v : block.values) w.f32(v);
  }

  std::ostringstream log;
  log << kLogHeader << '\n';
  for (const auto& e : model.log) {
    log << e.epoch << '\t' << format_real(e.train_loss) << '\t' << format_real(e.val_loss) << '\t'
        << format_real(e.val_f1) << '\n';
  }
  const std::string footer = log.str();
  const std::uint64_t offset = w.out.size();
  w.bytes(footer.data(), footer.size());

  Writer patch;
  patch.u64(offset);
  patch.u64(footer.size());
  std::memcpy(w.out.data() + offset_pos, patch.out.data(), patch.out.size());
  return std::move(w.out);
}

TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError(source + ": bad magic, not an NLSMDL01 checkpoint");
  if (bytes.size() < kHeaderBytes) throw LengthError(source + ": checkpoint header truncated");

  Reader r(bytes.subspan(kMagic.size()), source);
  if (const auto version = r.u32(); version != kVersion)
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));

  TrainedModel model;
  auto& c = model.config;
  c.input_layers = r.u32();
  c.input_dim = r.u32();
  c.conv_channels = r.u32();
  c.conv_layers = r.u32();
  c.conv_kernel = r.u32();
  c.fc_hidden = r.u32();
  c.n_classes = r.u32();
  c.dropout_p = r.f32();
  model.best_epoch = static_cast<int>(r.u32());
  const std::uint64_t log_offset = r.u64();
  const std::uint64_t log_length = r.u64();
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(source + ": invalid architecture in header: " + e.what());
  }

  model.params = ModelParams::zeros(c);
  const std::uint64_t payload = std::uint64_t{model.params.size()} * 4;
  if (log_offset != kHeaderBytes + payload || log_offset + log_length != bytes.size())
    throw LengthError(source + ": parameter payload or log footer does not match the header");

  Reader body(bytes.subspan(kHeaderBytes), source);
  for (auto& block : model.params.blocks)
    for (auto& v : block.values) {
      v = body.f32();
      if (!std::isfinite(v)) throw ValueError(source + ": non-finite parameter in block " + block.name);
    }

  const std::string footer(reinterpret_cast<const char*>(bytes.data() + log_offset), log_length);
  std::istringstream in(footer);
  detail::LineReader lines(in);
  std::string line;
  if (!lines.next(line) || line != kLogHeader) throw ParseError(source, 1, 1, "missing training-log header");
  while (lines.next(line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, '\t');
    if (f.size() != 4) throw ParseError(source, lines.line_number(), 1, "training-log row needs 4 columns");
    EpochLog e;
    const auto epoch = detail::parse_int(f[0]);
    if (!epoch) throw ParseError(source, lines.line_number(), 1, "bad epoch");
    e.epoch = static_cast<int>(*epoch);
    double* targets[] = {&e.train_loss, &e.val_loss, &e.val_f1};
    for (std::size_t k = 0; k < 3; ++k) {
      if (f[k + 1] == "nan") {
        *targets[k] = std::nan("");
        continue;
      }
      const auto v = detail::parse_double(f[k + 1]);
      if (!v) throw ParseError(source, lines.line_number(), k + 2, "bad real");
      *targets[k] = *v;
    }
    model.log.push_back(e);
  }
  return model;
}

void write_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  auto out = detail::open_output(path, true);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TrainedModel read_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace nlskit
