#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string_view>

#include "genaf/attacks.hpp"
#include "genaf/data.hpp"
#include "genaf/model.hpp"
#include "genaf/train_log.hpp"

namespace genaf {

enum class AdvSchedule { per_batch, precomputed };
enum class GraphFeatures { logits, encoder };
/// How the edge-wise KL terms of the genetic loss are combined: their sum, or their
/// mean over the N(N-1) off-diagonal edges of the batch graph.
enum class GrReduction { sum, mean };

std::string_view to_string(AdvSchedule s);
AdvSchedule parse_adv_schedule(std::string_view text);
std::string_view to_string(GraphFeatures g);
GraphFeatures parse_graph_features(std::string_view text);
std::string_view to_string(GrReduction r);
GrReduction parse_gr_reduction(std::string_view text);

struct Stage1Config {
  double lambda = 20.0;
  double lr_encoder = 1e-4;
  double lr_classifier = 5e-3;
  int64_t epochs = 50;
  int64_t batch_size = 256;
  AttackConfig attack = AttackConfig::pgd(10.0 / 255.0, /*random_start=*/true);
  AdvSchedule adv_schedule = AdvSchedule::per_batch;
  GraphFeatures graph_features = GraphFeatures::logits;
  GrReduction gr_reduction = GrReduction::mean;
  /// Treat the benign graph as a constant target when differentiating L_gr.
  bool stop_gradient_benign = false;
  /// One Adam over every parameter at `lr_shared` instead of the encoder/classifier pair.
  bool single_optimizer = false;
  double lr_shared = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  uint64_t seed = 0;

  void validate() const;
};

struct GdatLoss {
  torch::Tensor total;
  torch::Tensor dat;
  torch::Tensor gr;
};

/// dat = CE(logits(adversarial), labels); gr = genetic loss between the benign and
/// adversarial graphs; total = dat + lambda * gr. Uses the model's current mode.
/// Throws InputError when the batches are not sample-aligned.
GdatLoss compute_gdat_loss(DownstreamModel& model, const ImageBatch& benign, const ImageBatch& adversarial,
                           double lambda, GraphFeatures graph_features = GraphFeatures::logits,
                           bool stop_gradient_benign = false, GrReduction reduction = GrReduction::mean);

/// Genetic-driven dual-track adversarial fine-tuning.
TrainLog train_stage1(DownstreamModel& model, const ImageBatch& train_data, const Stage1Config& cfg);

/// Plain benign cross-entropy fine-tuning with the same optimizer arrangement,
/// shuffling and epochs as stage 1 (the "standard fine-tuning" baseline).
TrainLog train_standard(DownstreamModel& model, const ImageBatch& train_data, const Stage1Config& cfg);

}  // namespace genaf
