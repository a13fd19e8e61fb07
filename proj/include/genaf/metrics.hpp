#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "genaf/data.hpp"
#include "genaf/model.hpp"

namespace genaf {

struct MetricsReport {
  double ta = 0.0;   // percent
  double ra = 0.0;   // percent
  double asr = 0.0;  // percent
  int64_t n_clean = 0;
  int64_t n_adv = 0;
  std::string attack_descriptor;
  std::string model_hash;
  uint64_t seed = 0;
  double wall_time_s = 0.0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static MetricsReport load(const std::filesystem::path& path);
};

/// Percent of predictions equal to the labels. Throws InputError when empty.
double accuracy_percent(const torch::Tensor& predictions, const torch::Tensor& labels);
/// Percent of aligned prediction pairs that differ. Throws InputError when unpaired.
double flip_percent(const torch::Tensor& clean_predictions, const torch::Tensor& adversarial_predictions);

double compute_ta(DownstreamModel& model, const ImageBatch& clean_test);
double compute_ra(DownstreamModel& model, const ImageBatch& adversarial_test);
double compute_asr(DownstreamModel& model, const ImageBatch& clean_test, const ImageBatch& adversarial_test);

/// TA, RA and ASR from one pass over both sets.
MetricsReport evaluate(DownstreamModel& model, const ImageBatch& clean_test, const ImageBatch& adversarial_test,
                       std::string attack_descriptor, uint64_t seed);

}  // namespace genaf
