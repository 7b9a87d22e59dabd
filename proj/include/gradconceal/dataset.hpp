#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "gradconceal/tensor.hpp"

namespace gc::data {

/// Images are (N, H, W, C) with values in [0, 1]; one integer label per image.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  /// Throws ShapeError/ContractError when counts or label ranges are inconsistent.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

// IDX (big-endian) readers: images magic 0x00000803, labels magic 0x00000801.
Tensor read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, std::span<const unsigned char> pixels,
                      std::size_t count, std::size_t rows, std::size_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const unsigned char> labels);

// Raw tensor files: "GCMT", u32 rank, u32 dims..., little-endian f32 payload.
Tensor read_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor);

enum class Format { idx, raw_tensor };

/// Loads an image/label file pair. Raw-tensor labels may be stored either as
/// a rank-1 raw tensor of integral values or as an IDX label file.
Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                     Format format, std::size_t num_classes = 10);
void save_raw_dataset(const Dataset& d, const std::filesystem::path& images,
                      const std::filesystem::path& labels);

}  // namespace gc::data
