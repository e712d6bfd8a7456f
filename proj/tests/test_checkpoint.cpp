#include <gtest/gtest.h>

#include <filesystem>

#include "irisloc/checkpoint.hpp"
#include "irisloc/rng.hpp"

using namespace irisloc;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "irisloc_test_checkpoint";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Tensor<float> random_input(std::size_t h, std::size_t w) {
  Rng rng(17);
  Tensor<float> t(Shape{1, 1, h, w});
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

std::string section_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.section();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto cfg : {ModelConfig::unet_coord(), ModelConfig::u2net_lite()}) {
    const auto net = build_network(cfg, 21);
    const auto path = temp_path("round_trip.ckpt").string();
    save_checkpoint(net, path);
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.config(), net.config());
    ASSERT_EQ(loaded.parameters().size(), net.parameters().size());
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
      EXPECT_EQ(loaded.parameters()[i].name, net.parameters()[i].name);
      EXPECT_EQ(loaded.parameters()[i].tensor, net.parameters()[i].tensor);
    }
    const auto x = random_input(64, 64);
    EXPECT_EQ(loaded.infer(x), net.infer(x));
    EXPECT_EQ(serialize_checkpoint(loaded), read_file_bytes(path));
  }
}

TEST(Checkpoint, ConfigFlagsSurvive) {
  auto cfg = ModelConfig::unet_coord(32, 48);
  cfg.coord_every_level = true;
  cfg.base_channels = 3;
  cfg.depth = 2;
  const auto loaded = deserialize_checkpoint(serialize_checkpoint(build_network(cfg, 1)));
  EXPECT_EQ(loaded.config(), cfg);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(build_network(ModelConfig::unet_coord(32, 32), 1));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ILOC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 9);  // tagged config fields
  const auto crc = crc32_of(bytes.data() + 4, bytes.size() - 8);
  const std::uint32_t stored = bytes[bytes.size() - 4] | bytes[bytes.size() - 3] << 8 |
                               bytes[bytes.size() - 2] << 16 | static_cast<std::uint32_t>(bytes.back()) << 24;
  EXPECT_EQ(stored, crc);
}

TEST(Checkpoint, CorruptedPayloadByteFailsChecksum) {
  const auto good = serialize_checkpoint(build_network(ModelConfig::unet_coord(32, 32), 1));
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto bytes = good;
    // Last quarter of the file is float payload of the final layers.
    const auto pos = bytes.size() - 8 - rng.below(bytes.size() / 4);
    bytes[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    EXPECT_EQ(section_of(bytes), "checksum") << "byte " << pos;
  }
}

TEST(Checkpoint, CorruptedChecksumFails) {
  auto bytes = serialize_checkpoint(build_network(ModelConfig::unet_coord(32, 32), 1));
  bytes.back() ^= 0x40;
  EXPECT_EQ(section_of(bytes), "checksum");
}

TEST(Checkpoint, BadMagicVersionAndTruncation) {
  const auto good = serialize_checkpoint(build_network(ModelConfig::u2net_lite(32, 32), 1));
  auto bytes = good;
  bytes[0] = 'X';
  EXPECT_EQ(section_of(bytes), "magic");
  bytes = good;
  bytes[4] = 2;
  EXPECT_EQ(section_of(bytes), "version");
  EXPECT_EQ(section_of({}), "magic");
  for (std::size_t keep : {std::size_t{8}, std::size_t{30}, good.size() / 2, good.size() - 1}) {
    bytes.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_NE(section_of(bytes), "") << "kept " << keep;
  }
}

TEST(Checkpoint, BadConfigIsNamed) {
  auto bytes = serialize_checkpoint(build_network(ModelConfig::unet_coord(32, 32), 1));
  bytes[9 + 5 * 1 + 1] = 30;  // height field = 30, not divisible by 8
  EXPECT_EQ(section_of(bytes), "config");
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.ckpt").string()), IoError);
}
