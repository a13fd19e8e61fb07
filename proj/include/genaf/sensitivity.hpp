#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "genaf/attacks.hpp"
#include "genaf/model.hpp"

namespace genaf {

struct RcConfig {
  double gamma = 0.01;  // radius relative to ‖θ^(k)‖_p
  Norm norm = Norm::l2;
  int64_t ascent_steps = 5;
  int64_t eval_subset_size = 1024;
  uint64_t seed = 0;
  int64_t batch_size = 256;

  void validate() const;
  nlohmann::json to_json() const;
  static RcConfig from_json(const nlohmann::json& j);
};

struct SensitivityEntry {
  std::string layer_id;
  double rc = 0.0;
};

/// One robustness contribution per registry layer, kept in registry order.
struct SensitivityDictionary {
  std::vector<SensitivityEntry> entries;
  RcConfig config;
  std::string model_hash;

  /// Throws InputError for an unknown layer.
  double at(std::string_view layer_id) const;

  /// {model_hash, config{gamma,norm_p,ascent_steps,eval_subset_size,seed}, entries:[{layer_id, rc}]}
  /// with entries sorted ascending by rc (ties keep registry order).
  nlohmann::json to_json() const;
  static SensitivityDictionary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SensitivityDictionary load(const std::filesystem::path& path);
};

/// Called after each candidate perturbation is applied, while the model holds it.
using RcObserver = std::function<void(const DownstreamModel&)>;

/// Mean cross-entropy of the model (eval mode) on a fixed adversarial set.
double adversarial_loss(DownstreamModel& model, const ImageBatch& adversarial, int64_t batch_size = 256);

/// Largest increase of the adversarial loss reachable by perturbing only this layer
/// within ‖Δ‖_p <= gamma·‖θ^(k)‖_p, found by projected ascent (zero perturbation is a
/// candidate). `adversarial` is the fixed evaluation set; parameters are restored bitwise.
double layer_robustness_contribution(DownstreamModel& model, std::string_view layer_id, const ImageBatch& adversarial,
                                     const RcConfig& cfg, const RcObserver& observer = {});

/// Nested-projection mode: one ascent path at max(gammas); the candidates for each
/// gamma are that path projected onto its ball, unioned with the candidates of every
/// smaller gamma. The result is monotone in gamma. Returned in the order of `gammas`.
std::vector<double> layer_robustness_contribution_nested(DownstreamModel& model, std::string_view layer_id,
                                                         const ImageBatch& adversarial, const RcConfig& cfg,
                                                         const std::vector<double>& gammas);

/// Draws the fixed evaluation subset, generates its adversarial counterparts once at
/// the current parameters with `attack`, then scores every layer against them.
SensitivityDictionary build_sensitivity_dictionary(DownstreamModel& model, const ImageBatch& data,
                                                   const RcConfig& cfg, const AttackConfig& attack);

/// The floor(ratio·L) layers with the smallest RC, ascending; ties by registry order.
std::vector<std::string> select_topk_least_robust(const SensitivityDictionary& dict, double ratio);

}  // namespace genaf
