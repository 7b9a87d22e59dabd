#include "gradconceal/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "gradconceal/errors.hpp"

namespace gc::nn {

namespace {

void put_le(std::vector<unsigned char>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const unsigned char> b, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b[off + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Model& model) {
  std::vector<unsigned char> b = {'G', 'C', 'M', 'B'};
  put_le(b, kCheckpointVersion, 2);
  const std::string desc = model.arch().to_text();
  put_le(b, desc.size(), 4);
  b.insert(b.end(), desc.begin(), desc.end());
  const std::size_t payload_start = b.size();
  for (const auto& p : model.parameters())
    for (float v : p.value.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_le(b, bits, 4);
    }
  const std::uint32_t crc = crc32_of(std::span(b).subspan(payload_start));
  put_le(b, crc, 4);
  return b;
}

Model decode_checkpoint(std::span<const unsigned char> b) {
  if (b.size() < 10 || std::memcmp(b.data(), "GCMB", 4) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
  const auto version = static_cast<std::uint16_t>(get_le(b, 4, 2));
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const std::size_t desc_len = get_le(b, 6, 4);
  if (10 + desc_len > b.size()) throw IntegrityError("checkpoint truncated inside the architecture descriptor");
  const std::string desc(reinterpret_cast<const char*>(b.data() + 10), desc_len);

  Model model = build_model(ArchSpec::from_text(desc), 0);
  const std::size_t payload_start = 10 + desc_len;
  const std::size_t payload_bytes = 4 * model.parameter_count();
  if (b.size() != payload_start + payload_bytes + 4)
    throw IntegrityError("checkpoint size mismatch: expected " + std::to_string(payload_start + payload_bytes + 4) +
                         " bytes, found " + std::to_string(b.size()));
  const auto payload = b.subspan(payload_start, payload_bytes);
  const auto stored = static_cast<std::uint32_t>(get_le(b, payload_start + payload_bytes, 4));
  if (stored != crc32_of(payload)) throw IntegrityError("checkpoint checksum mismatch");

  std::size_t off = 0;
  for (auto& p : model.parameters()) {
    std::vector<float> values(p.value.size());
    for (auto& v : values) {
      const auto bits = static_cast<std::uint32_t>(get_le(payload, off, 4));
      std::memcpy(&v, &bits, 4);
      off += 4;
    }
    p.value = Tensor(p.value.shape(), std::move(values));
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path) {
  save_checkpoint(model, path);
  return load_checkpoint(path);
}

}  // namespace gc::nn
