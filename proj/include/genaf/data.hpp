#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace genaf {

/// Labelled images: pixels (N, C, H, W) with values in [0, 1], labels (N) as int64.
/// Whole datasets use the same type; batching slices it.
struct ImageBatch {
  torch::Tensor pixels;
  torch::Tensor labels;

  int64_t size() const { return pixels.defined() ? pixels.size(0) : 0; }
  bool empty() const { return size() == 0; }

  /// Throws InputError when the batch breaks its invariants (shape, pixel range,
  /// label range when `num_classes > 0`).
  void validate(int64_t num_classes = 0) const;

  ImageBatch slice(int64_t begin, int64_t end) const;
  ImageBatch select(const torch::Tensor& indices) const;
  ImageBatch clone() const;
  /// Copy with float pixels of the given dtype.
  ImageBatch to(torch::Dtype dtype) const;
};

/// Concatenates batches with identical (C, H, W).
ImageBatch concat(const std::vector<ImageBatch>& parts);

/// Deterministic CPU generator.
torch::Generator make_generator(uint64_t seed);

/// Index sets for one pass over `n` samples. `shuffle` draws a permutation from `gen`.
std::vector<torch::Tensor> batch_indices(int64_t n, int64_t batch_size, bool shuffle,
                                         torch::Generator* gen = nullptr);

/// First `count` samples of a seeded permutation (all samples when count >= n).
ImageBatch subset(const ImageBatch& data, int64_t count, uint64_t seed);

/// Loads a packed array file or an image folder (one subfolder per class).
/// Image folders are resized to `hw` when it is non-zero.
ImageBatch load_dataset(const std::filesystem::path& path, int64_t channels = 3, int64_t hw = 0);

ImageBatch load_image_folder(const std::filesystem::path& root, int64_t channels, int64_t hw);

/// Packed array with arrays "images" (u8 or f32, N×C×H×W) and "labels" (i64, N).
ImageBatch load_packed_dataset(const std::filesystem::path& path);
void save_packed_dataset(const ImageBatch& data, const std::filesystem::path& path,
                         bool quantize_u8 = false);

}  // namespace genaf
