#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace genaf {

struct StepRecord {
  int64_t epoch = 0;
  int64_t step = 0;
  double dat = 0.0;    // adversarial (stage 1) or benign (standard, stage 2) cross-entropy
  double gr = 0.0;     // genetic regularization term, 0 outside stage 1
  double total = 0.0;
  double lr_e = 0.0;
  double lr_c = 0.0;
  double wall_time = 0.0;  // seconds since the loop started
};

struct EpochRecord {
  int64_t epoch = 0;
  double dat = 0.0;
  double gr = 0.0;
  double total = 0.0;
};

struct TrainLog {
  std::string stage;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  /// Appends per-epoch means of the step records of `epoch`.
  void close_epoch(int64_t epoch);

  /// One JSON object per line: {"stage","epoch","step","dat","gr","total","lr_e","lr_c","wall_time"}.
  void write_jsonl(const std::filesystem::path& path) const;
  static TrainLog read_jsonl(const std::filesystem::path& path);
};

}  // namespace genaf
