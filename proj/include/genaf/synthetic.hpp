#pragma once

#include <cstdint>
#include <string_view>

#include "genaf/data.hpp"

namespace genaf {

enum class SyntheticStyle {
  /// One shape per image over a shaded, noisy background. Classes in order:
  /// horizontal bar, vertical bar, disk, cross, ring, square.
  shapes,
  /// A soft elongated blob; even classes lie horizontal, odd classes vertical.
  blobs,
};

std::string_view to_string(SyntheticStyle s);
SyntheticStyle parse_synthetic_style(std::string_view text);

struct SyntheticConfig {
  SyntheticStyle style = SyntheticStyle::shapes;
  int64_t num_samples = 2000;
  int64_t num_classes = 2;  // shapes: at most 6
  int64_t image_size = 32;
  int64_t channels = 3;
  double noise = 0.04;        // per-pixel Gaussian sigma
  double min_contrast = 0.5;  // shape-vs-background colour gap (L∞ over channels)
  uint64_t seed = 0;
};

/// Deterministic in `cfg`; labels are balanced (i mod num_classes, then shuffled).
ImageBatch generate_synthetic(const SyntheticConfig& cfg);

}  // namespace genaf
