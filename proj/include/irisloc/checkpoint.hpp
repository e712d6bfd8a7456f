#ifndef IRISLOC_CHECKPOINT_HPP
#define IRISLOC_CHECKPOINT_HPP

// Checkpoint file layout (all integers little-endian):
//
//   "ILOC"                     4-byte magic
//   u32 version                currently 1
//   config block               u8 field count, then per field: u8 tag, u32 value
//                                1 variant        (0 unet-coord, 1 u2net-lite)
//                                2 height         3 width
//                                4 input-channels 5 base-channels
//                                6 depth          7 rsu-inner-depth
//                                8 output-head    (0 linear, 1 sigmoid)
//                                9 coord-every-level (0/1)
//   parameters, in network order, until the checksum:
//                              u16 name length, name bytes, u8 ndim,
//                              u32 dims[ndim], float32 payload
//   u32 CRC-32                 over every byte after the magic
//
// Loading rebuilds the layer plan from the config and then requires the
// stored parameter names and shapes to match it exactly.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "irisloc/errors.hpp"
#include "irisloc/models.hpp"

namespace irisloc {

inline constexpr char kCheckpointMagic[4] = {'I', 'L', 'O', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  void need(std::size_t n, const std::string& section) const {
    if (end_ - pos_ < n) throw CheckpointError(section, "truncated");
  }
  std::uint8_t u8(const std::string& section) {
    need(1, section);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const std::string& section) {
    need(2, section);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const std::string& section) { return std::bit_cast<float>(u32(section)); }
  std::string str(std::size_t n, const std::string& section) {
    need(n, section);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const auto& c = net.config();
  const std::pair<std::uint8_t, std::uint32_t> fields[] = {
      {1, static_cast<std::uint32_t>(c.variant)},
      {2, static_cast<std::uint32_t>(c.height)},
      {3, static_cast<std::uint32_t>(c.width)},
      {4, static_cast<std::uint32_t>(c.input_channels)},
      {5, static_cast<std::uint32_t>(c.base_channels)},
      {6, static_cast<std::uint32_t>(c.depth)},
      {7, static_cast<std::uint32_t>(c.rsu_inner_depth)},
      {8, static_cast<std::uint32_t>(c.head)},
      {9, c.coord_every_level ? 1u : 0u},
  };
  w.u8(static_cast<std::uint8_t>(std::size(fields)));
  for (const auto& [tag, value] : fields) {
    w.u8(tag);
    w.u32(value);
  }
  for (const auto& p : net.parameters()) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.tensor.data()) w.f32(v);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32_of(bytes.data() + 4, bytes.size() - 4);
  w.u32(crc);
  return std::move(bytes);
}

inline Network<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("magic", "not an ILOC checkpoint");
  }
  if (bytes.size() < 12) throw CheckpointError("header", "truncated");
  const std::size_t payload_end = bytes.size() - 4;
  detail::ByteReader r(bytes, 4, payload_end);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("version", "unsupported version " + std::to_string(version));
  }

  ModelConfig cfg;
  const auto count = r.u8("config");
  for (std::uint8_t i = 0; i < count; ++i) {
    const auto tag = r.u8("config");
    const auto value = r.u32("config");
    switch (tag) {
      case 1:
        if (value > 1) throw CheckpointError("config", "bad variant " + std::to_string(value));
        cfg.variant = static_cast<Variant>(value);
        break;
      case 2: cfg.height = value; break;
      case 3: cfg.width = value; break;
      case 4: cfg.input_channels = value; break;
      case 5: cfg.base_channels = value; break;
      case 6: cfg.depth = value; break;
      case 7: cfg.rsu_inner_depth = value; break;
      case 8:
        if (value > 1) throw CheckpointError("config", "bad output head " + std::to_string(value));
        cfg.head = static_cast<OutputHead>(value);
        break;
      case 9: cfg.coord_every_level = value != 0; break;
      default: throw CheckpointError("config", "unknown field tag " + std::to_string(tag));
    }
  }

  Network<float> skeleton = [&] {
    try {
      return build_network<float>(cfg, 0);
    } catch (const ValidationError& e) {
      throw CheckpointError("config", e.what());
    }
  }();

  Network<float> net(cfg);
  std::size_t index = 0;
  while (!r.done()) {
    const std::string where = "parameter #" + std::to_string(index);
    const auto name_len = r.u16(where);
    const std::string name = r.str(name_len, where);
    const std::string section = "parameter '" + name + "'";
    const auto ndim = r.u8(section);
    Shape shape(ndim);
    for (auto& d : shape) d = r.u32(section);
    const std::size_t n = element_count(shape);
    r.need(n * 4, section);
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32(section);
    const auto& expected = skeleton.parameters();
    if (index >= expected.size() || expected[index].name != name ||
        expected[index].tensor.shape() != shape) {
      throw CheckpointError(section, "does not match the layer plan of the stored config");
    }
    net.add_parameter(name, Tensor<float>(shape, std::move(values)));
    ++index;
  }
  if (index != skeleton.parameters().size()) {
    throw CheckpointError("parameters", "expected " + std::to_string(skeleton.parameters().size()) +
                                            " tensors, found " + std::to_string(index));
  }

  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[payload_end + i]) << (8 * i);
  if (stored != crc32_of(bytes.data() + 4, payload_end - 4)) {
    throw CheckpointError("checksum", "CRC-32 mismatch");
  }

  for (const auto& layer : skeleton.plan()) net.add_layer(layer);
  net.set_output(skeleton.output_slot());
  return net;
}

inline void save_checkpoint(const Network<float>& net, const std::string& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Network<float> load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace irisloc

#endif  // IRISLOC_CHECKPOINT_HPP
