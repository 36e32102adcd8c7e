#include <doctest.h>

#include <bit>
#include <cstring>
#include <random>

#include "nlskit/checkpoint.hpp"
#include "nlskit/error.hpp"
#include "oracles.hpp"

using namespace nlskit;

namespace {

TrainedModel random_model(std::mt19937_64& gen) {
  std::uniform_int_distribution<std::uint32_t> small(1, 6);
  TrainedModel m;
  m.config.input_layers = small(gen);
  m.config.input_dim = small(gen);
  m.config.conv_channels = small(gen);
  m.config.conv_layers = small(gen) % 3 + 1;
  m.config.fc_hidden = small(gen);
  m.config.dropout_p = 0.1f * static_cast<float>(small(gen) - 1);
  m.params = ModelParams::zeros(m.config);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (auto& b : m.params.blocks)
    for (auto& v : b.values) {
      do v = std::bit_cast<float>(bits(gen));
      while (!std::isfinite(v));
    }
  std::uniform_real_distribution<double> real(0.0, 3.0);
  const int epochs = static_cast<int>(small(gen));
  for (int e = 1; e <= epochs; ++e) m.log.push_back({e, real(gen), real(gen) / 7.0, real(gen) / 3.0});
  m.best_epoch = epochs;
  return m;
}

bool bit_equal(const TrainedModel& a, const TrainedModel& b) {
  if (!(a.config == b.config) || a.best_epoch != b.best_epoch || a.params.blocks.size() != b.params.blocks.size())
    return false;
  for (std::size_t i = 0; i < a.params.blocks.size(); ++i) {
    const auto& x = a.params.blocks[i].values;
    const auto& y = b.params.blocks[i].values;
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  if (a.log.size() != b.log.size()) return false;
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    const auto& p = a.log[i];
    const auto& q = b.log[i];
    if (p.epoch != q.epoch || std::bit_cast<std::uint64_t>(p.train_loss) != std::bit_cast<std::uint64_t>(q.train_loss) ||
        std::bit_cast<std::uint64_t>(p.val_loss) != std::bit_cast<std::uint64_t>(q.val_loss) ||
        std::bit_cast<std::uint64_t>(p.val_f1) != std::bit_cast<std::uint64_t>(q.val_f1))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trips are bit-exact") {
  std::mt19937_64 gen(77);
  oracle::TempDir dir("ckpt");
  for (int i = 0; i < 30; ++i) {
    const auto m = random_model(gen);
    const auto bytes = encode_checkpoint(m);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "NLSMDL01");
    CHECK(bit_equal(decode_checkpoint(bytes, "mem"), m));
    const auto path = dir.path() / "m.nlsmdl";
    write_checkpoint(m, path);
    CHECK(bit_equal(read_checkpoint(path), m));
  }
}

TEST_CASE("checkpoint decoder rejects corruption") {
  std::mt19937_64 gen(5);
  const auto bytes = encode_checkpoint(random_model(gen));
  SUBCASE("magic") {
    auto b = bytes;
    b[3] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), FormatError);
  }
  SUBCASE("version") {
    auto b = bytes;
    b[8] = 9;
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), FormatError);
  }
  SUBCASE("truncation") {
    auto b = bytes;
    b.resize(b.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), LengthError);
    b.resize(40);
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), LengthError);
  }
  SUBCASE("architecture") {
    auto b = bytes;
    std::memset(b.data() + 12, 0, 4);  // input_layers = 0
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), FormatError);
  }
  SUBCASE("non-finite parameter") {
    auto b = bytes;
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(b.data() + 64, &inf, 4);
    CHECK_THROWS_AS(decode_checkpoint(b, "x"), ValueError);
  }
}

TEST_CASE("encoder checks the parameter layout") {
  std::mt19937_64 gen(9);
  auto m = random_model(gen);
  m.params.blocks.pop_back();
  CHECK_THROWS_AS(encode_checkpoint(m), DimensionError);
}
