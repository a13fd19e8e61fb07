#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "genaf/data.hpp"
#include "genaf/model.hpp"

namespace genaf {

struct AugmentConfig {
  double crop_scale_min = 0.5;  // area fraction of the random resized crop
  bool horizontal_flip = true;
  double brightness = 0.6;
  double contrast = 0.6;
  double saturation = 0.8;
  double hue = 0.5;        // rotation about the gray axis, up to hue·π radians
  double grayscale = 0.3;  // probability of dropping colour altogether
};

struct PretrainConfig {
  std::filesystem::path dataset_path;  // used by the path-based overload
  int64_t epochs = 20;
  int64_t batch_size = 256;
  double temperature = 0.5;
  double lr = 1e-3;
  int64_t projection_dim = 64;
  uint64_t augmentation_seed = 0;
  uint64_t init_seed = 0;
  AugmentConfig augment;

  void validate() const;
};

/// Random resized crop, horizontal flip and colour jitter, one draw per sample.
torch::Tensor augment(const torch::Tensor& pixels, const AugmentConfig& cfg, torch::Generator& gen);

/// Normalized temperature-scaled cross-entropy over two views; row i of `z1`
/// and row i of `z2` are the positive pair.
torch::Tensor nt_xent_loss(const torch::Tensor& z1, const torch::Tensor& z2, double temperature);

struct PretrainResult {
  DownstreamModel model;
  double initial_loss = 0.0;          // one no-grad pass before training
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

/// Contrastive pre-training of the encoder. The classifier keeps its fresh
/// initialization; the projection head is discarded. Throws InputError when empty.
PretrainResult pretrain_encoder(const ImageBatch& data, const Architecture& arch, const PretrainConfig& cfg);
DownstreamModel pretrain_encoder(const PretrainConfig& cfg, const Architecture& arch);

/// Loads a checkpoint directory (IoError/ConfigError as load_checkpoint).
DownstreamModel load_encoder(const std::filesystem::path& path);

}  // namespace genaf
