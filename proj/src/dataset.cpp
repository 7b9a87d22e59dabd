#include "gradconceal/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "gradconceal/errors.hpp"

namespace gc::data {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr char kRawMagic[4] = {'G', 'C', 'M', 'T'};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw FormatError(what + ": truncated header", off);
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::uint32_t le32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw FormatError(what + ": truncated header", off);
  return std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) | (std::uint32_t{b[off + 2]} << 16) |
         (std::uint32_t{b[off + 3]} << 24);
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void put_le32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<unsigned char>(v >> s));
}

std::string magic_hex(std::uint32_t m) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", m);
  return buf;
}

}  // namespace

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (images.rank() < 2) throw ShapeError("dataset images need a leading sample axis");
  if (images.dim(0) != labels.size())
    throw ShapeError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                     std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractError("empty dataset subset");
  const std::size_t stride = images.row_size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<float> data;
  data.reserve(indices.size() * stride);
  std::vector<int> ys;
  ys.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ContractError("subset index out of range");
    auto row = images.row(i);
    data.insert(data.end(), row.begin(), row.end());
    ys.push_back(labels[i]);
  }
  return Dataset{Tensor(std::move(shape), std::move(data)), std::move(ys), num_classes};
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  return Dataset{images.slice_rows(0, n), std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)),
                 num_classes};
}

Tensor read_idx_images(const std::filesystem::path& path) {
  const auto b = read_file(path);
  const std::string what = "IDX images " + path.string();
  const std::uint32_t magic = be32(b, 0, what);
  if (magic != kIdxImages)
    throw FormatError(what + ": bad magic " + magic_hex(magic) + ", expected " + magic_hex(kIdxImages), 0);
  const std::size_t n = be32(b, 4, what), rows = be32(b, 8, what), cols = be32(b, 12, what);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(what + ": zero dimension", 4);
  const std::size_t count = n * rows * cols;
  if (b.size() != 16 + count)
    throw FormatError(what + ": expected " + std::to_string(count) + " pixel bytes, found " +
                          std::to_string(b.size() - std::min<std::size_t>(b.size(), 16)),
                      std::min<std::size_t>(b.size(), 16 + count));
  std::vector<float> px(count);
  for (std::size_t i = 0; i < count; ++i) px[i] = static_cast<float>(b[16 + i]) / 255.0f;
  return Tensor({n, rows, cols, 1}, std::move(px));
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto b = read_file(path);
  const std::string what = "IDX labels " + path.string();
  const std::uint32_t magic = be32(b, 0, what);
  if (magic != kIdxLabels)
    throw FormatError(what + ": bad magic " + magic_hex(magic) + ", expected " + magic_hex(kIdxLabels), 0);
  const std::size_t n = be32(b, 4, what);
  if (b.size() != 8 + n)
    throw FormatError(what + ": expected " + std::to_string(n) + " label bytes", std::min<std::size_t>(b.size(), 8 + n));
  return std::vector<int>(b.begin() + 8, b.end());
}

void write_idx_images(const std::filesystem::path& path, std::span<const unsigned char> pixels,
                      std::size_t count, std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw ShapeError("IDX image payload size mismatch");
  std::vector<unsigned char> b;
  put_be32(b, kIdxImages);
  put_be32(b, static_cast<std::uint32_t>(count));
  put_be32(b, static_cast<std::uint32_t>(rows));
  put_be32(b, static_cast<std::uint32_t>(cols));
  b.insert(b.end(), pixels.begin(), pixels.end());
  write_file(path, b);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const unsigned char> labels) {
  std::vector<unsigned char> b;
  put_be32(b, kIdxLabels);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  write_file(path, b);
}

Tensor read_raw_tensor(const std::filesystem::path& path) {
  const auto b = read_file(path);
  const std::string what = "raw tensor " + path.string();
  if (b.size() < 8 || std::memcmp(b.data(), kRawMagic, 4) != 0) throw FormatError(what + ": bad magic", 0);
  const std::size_t rank = le32(b, 4, what);
  Shape shape(rank);
  std::size_t off = 8;
  for (auto& d : shape) {
    d = le32(b, off, what);
    if (d == 0) throw FormatError(what + ": zero dimension", off);
    off += 4;
  }
  const std::size_t count = shape_size(shape);
  if (b.size() != off + 4 * count)
    throw FormatError(what + ": payload holds " + std::to_string((b.size() - off) / 4) + " floats, header says " +
                          std::to_string(count),
                      off);
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = le32(b, off + 4 * i, what);
    std::memcpy(&data[i], &bits, 4);
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::vector<unsigned char> b(kRawMagic, kRawMagic + 4);
  put_le32(b, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_le32(b, static_cast<std::uint32_t>(d));
  for (float v : tensor.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le32(b, bits);
  }
  write_file(path, b);
}

Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, Format format,
                     std::size_t num_classes) {
  Dataset d;
  d.num_classes = num_classes;
  if (format == Format::idx) {
    d.images = read_idx_images(images);
    d.labels = read_idx_labels(labels);
  } else {
    d.images = read_raw_tensor(images);
    if (d.images.rank() == 3) d.images = d.images.reshaped({d.images.dim(0), d.images.dim(1), d.images.dim(2), 1});
    if (d.images.rank() != 4) throw FormatError("raw-tensor images must be rank 3 or 4", 4);
    const auto head = read_file(labels);
    if (head.size() >= 4 && std::memcmp(head.data(), kRawMagic, 4) == 0) {
      const Tensor t = read_raw_tensor(labels);
      if (t.rank() != 1) throw FormatError("raw-tensor labels must be rank 1", 4);
      for (float v : t.data()) {
        if (v != std::floor(v)) throw FormatError("raw-tensor labels must be integral", 12);
        d.labels.push_back(static_cast<int>(v));
      }
    } else {
      d.labels = read_idx_labels(labels);
    }
  }
  if (d.images.dim(0) != d.labels.size())
    throw FormatError("image file has " + std::to_string(d.images.dim(0)) + " samples but label file has " +
                          std::to_string(d.labels.size()),
                      4);
  for (float v : d.images.data())
    if (v < 0.0f || v > 1.0f) throw FormatError("pixel value outside [0,1]", 0);
  for (std::size_t i = 0; i < d.labels.size(); ++i)
    if (d.labels[i] < 0 || static_cast<std::size_t>(d.labels[i]) >= num_classes)
      throw FormatError("label " + std::to_string(d.labels[i]) + " outside [0, " + std::to_string(num_classes) + ")",
                        format == Format::idx ? 8 + i : 12 + 4 * i);
  d.validate();
  return d;
}

void save_raw_dataset(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
  d.validate();
  write_raw_tensor(images, d.images);
  std::vector<float> ys(d.labels.begin(), d.labels.end());
  const std::size_t n = ys.size();
  write_raw_tensor(labels, Tensor({n}, std::move(ys)));
}

}  // namespace gc::data
