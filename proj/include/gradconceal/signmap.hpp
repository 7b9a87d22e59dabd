#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gradconceal/tensor.hpp"

namespace gc::viz {

/// Gray level used for a zero gradient; -1 maps to 0 and +1 to 255.
inline constexpr std::uint8_t kZeroLevel = 128;

/// Elementwise sign over {-1, 0, +1}; NaN maps to 0.
Tensor sign_map(const Tensor& grad);

/// 8-bit levels for one channel of an (H, W, C) (or (1, H, W, C)) gradient.
std::vector<std::uint8_t> channel_levels(const Tensor& grad, std::size_t channel);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);
/// Interleaved RGB.
void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb);

/// Writes `<stem>.pgm` for one channel, else `<stem>_c<k>.pgm` per channel and
/// additionally `<stem>.ppm` when there are three. Returns the written paths.
/// Throws IoError when a file cannot be written.
std::vector<std::filesystem::path> render_sign_map(const Tensor& grad, const std::filesystem::path& stem);

/// Dispersion of a rendered three-level map: the Shannon entropy (bits) of the
/// level histogram in each pixel's 3x3 neighbourhood, averaged over pixels.
/// 0 for a map of uniform sign, at most log2(3).
double local_sign_entropy(const GrayImage& image);

}  // namespace gc::viz
