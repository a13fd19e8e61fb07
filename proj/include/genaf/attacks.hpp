#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "genaf/data.hpp"
#include "genaf/model.hpp"

namespace genaf {

enum class Norm { inf, l2 };

std::string_view to_string(Norm norm);
/// Accepts "inf", "linf", "2", "l2".
Norm parse_norm(std::string_view text);

/// Feasible set {δ : ‖δ‖_p ≤ epsilon} plus the inner-loop schedule.
struct AttackConfig {
  double epsilon = 10.0 / 255.0;
  Norm norm = Norm::inf;
  int64_t steps = 10;
  double step_size = 2.5 / 255.0;
  bool random_start = true;

  /// steps=10, step_size=epsilon/4.
  static AttackConfig pgd(double epsilon, bool random_start, Norm norm = Norm::inf);
  /// Throws ConfigError.
  void validate() const;
  std::string descriptor() const;
};

/// Gradient-ascent on cross-entropy inside the ε-ball, clipped to [0,1].
/// Returns, per sample, the visited iterate (start included) with the largest loss.
/// Runs with the model in eval mode and restores its mode afterward.
/// `gen` drives the random start; required only when cfg.random_start is set.
ImageBatch pgd_attack(DownstreamModel& model, const ImageBatch& batch, const AttackConfig& cfg,
                      torch::Generator* gen = nullptr);

/// pgd_attack over a whole dataset in mini-batches with one seeded generator.
ImageBatch pgd_attack_dataset(DownstreamModel& model, const ImageBatch& data, const AttackConfig& cfg,
                              int64_t batch_size, uint64_t seed);

struct UniversalPerturbation {
  torch::Tensor delta;  // (C, H, W)
  double epsilon = 0.0;
  Norm norm = Norm::inf;
  uint64_t seed = 0;
  double fooling_rate = 0.0;  // on the construction set, percent
};

struct UapOptions {
  int64_t max_samples = 512;      // construction set size (seeded subset)
  int64_t deepfool_steps = 10;
  double overshoot = 0.02;
  uint64_t seed = 0;
};

/// Universal perturbation by per-sample minimal-push accumulation: every sample that
/// the current δ does not fool contributes a linearized minimal boundary crossing, and
/// δ is projected back onto the ε-ball after each update. `max_passes` sweeps.
UniversalPerturbation uap_attack(DownstreamModel& model, const ImageBatch& dataset, const AttackConfig& cfg,
                                 int64_t max_passes, const UapOptions& options = {});

/// clip(x + δ, 0, 1); labels unchanged.
ImageBatch apply_perturbation(const ImageBatch& batch, const UniversalPerturbation& delta);

/// Percent of samples whose prediction changes under δ.
double fooling_rate(DownstreamModel& model, const ImageBatch& data, const torch::Tensor& delta);

/// Number of pgd/uap calls in this process (instrumentation).
uint64_t attack_invocations();

/// Packed array with array "delta" and meta {epsilon, norm, seed, fooling_rate}.
void save_perturbation(const std::filesystem::path& path, const UniversalPerturbation& p);
UniversalPerturbation load_perturbation(const std::filesystem::path& path);

/// Largest value representable in `dtype` that is <= v.
double floor_to_dtype(double v, torch::Dtype dtype);

}  // namespace genaf
