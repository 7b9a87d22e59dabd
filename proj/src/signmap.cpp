#include "gradconceal/signmap.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "gradconceal/errors.hpp"

namespace gc::viz {

namespace {

struct ImageDims {
  std::size_t h, w, c;
};

ImageDims image_dims(const Tensor& grad) {
  const auto& s = grad.shape();
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  throw ShapeError("sign map needs an (H, W, C) gradient, got " + shape_string(s));
}

std::uint8_t level(float g) {
  if (g > 0.0f) return 255;
  if (g < 0.0f) return 0;
  return kZeroLevel;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

Tensor sign_map(const Tensor& grad) {
  std::vector<float> s(grad.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = grad[i] > 0.0f ? 1.0f : (grad[i] < 0.0f ? -1.0f : 0.0f);
  return Tensor(grad.shape(), std::move(s));
}

std::vector<std::uint8_t> channel_levels(const Tensor& grad, std::size_t channel) {
  const auto d = image_dims(grad);
  if (channel >= d.c) throw ContractError("channel " + std::to_string(channel) + " out of range");
  std::vector<std::uint8_t> out(d.h * d.w);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = level(grad[p * d.c + channel]);
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  auto out = open_for_write(path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw FormatError("not an 8-bit binary PGM", 0);
  in.get();
  const auto header = static_cast<std::size_t>(in.tellg());
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError("truncated PGM payload", header);
  return img;
}

void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw ContractError("PPM payload size mismatch");
  auto out = open_for_write(path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::filesystem::path> render_sign_map(const Tensor& grad, const std::filesystem::path& stem) {
  const auto d = image_dims(grad);
  std::vector<std::filesystem::path> written;
  for (std::size_t c = 0; c < d.c; ++c) {
    std::filesystem::path p = stem;
    p += d.c == 1 ? std::string(".pgm") : "_c" + std::to_string(c) + ".pgm";
    write_pgm(p, GrayImage{d.w, d.h, channel_levels(grad, c)});
    written.push_back(std::move(p));
  }
  if (d.c == 3) {
    std::vector<std::uint8_t> rgb(grad.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = level(grad[i]);
    std::filesystem::path p = stem;
    p += ".ppm";
    write_ppm(p, d.w, d.h, rgb);
    written.push_back(std::move(p));
  }
  return written;
}

double local_sign_entropy(const GrayImage& image) {
  if (image.pixels.empty()) return 0.0;
  auto bucket = [](std::uint8_t v) { return v < kZeroLevel ? 0 : (v == kZeroLevel ? 1 : 2); };
  const auto h = static_cast<std::ptrdiff_t>(image.height), w = static_cast<std::ptrdiff_t>(image.width);
  double total = 0.0;
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      std::array<int, 3> counts{};
      int n = 0;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          ++counts[bucket(image.pixels[static_cast<std::size_t>(yy * w + xx)])];
          ++n;
        }
      for (int k : counts)
        if (k > 0) {
          const double p = static_cast<double>(k) / n;
          total -= p * std::log2(p);
        }
    }
  return total / static_cast<double>(h * w);
}

}  // namespace gc::viz
