#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genaf/data.hpp"
#include "genaf/model.hpp"
#include "genaf/train_log.hpp"

namespace genaf {

struct Stage2Config {
  double topk_ratio = 0.2;
  double lr = 1e-3;
  int64_t epochs = 20;
  int64_t batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  uint64_t seed = 0;

  void validate() const;
};

/// Benign cross-entropy fine-tuning of the selected layers only, with a fresh Adam.
/// Unselected layers stay bitwise unchanged and their normalization layers run on
/// running statistics without updating them. Throws InputError for unknown ids.
TrainLog train_stage2(DownstreamModel& model, const ImageBatch& train_data, const std::vector<std::string>& selection,
                      const Stage2Config& cfg);

}  // namespace genaf
