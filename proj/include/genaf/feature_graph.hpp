#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace genaf {

/// Per-batch similarity graph over feature vectors.
///   d_ij  = 1 - cos(v_i, v_j)                 cosine distance in [0, 2]
///   rho_j = min_{k != j} d_jk                 nearest-neighbour offset
///   a_ik  = 2 - (d_ik - rho_k)                affinity, k != i
///   W_ik  = a_ik / sum_{m != i} a_im          row-stochastic, zero diagonal
struct FeatureGraph {
  torch::Tensor nodes;    // (N, d)
  torch::Tensor rho;      // (N)
  torch::Tensor weights;  // (N, N)
};

/// Benign and adversarial graphs over the same samples in the same order.
struct GraphPair {
  FeatureGraph benign;
  FeatureGraph adversarial;
  bool aligned = true;
};

inline constexpr double kWeightClamp = 1e-7;

/// Pairwise cosine distances, clamped to [0, 2]. Differentiable.
torch::Tensor cosine_distance_matrix(const torch::Tensor& features);

/// Throws InputError for N < 2 and NumericalError naming the first zero-norm row.
/// Differentiable with respect to `features`.
FeatureGraph build_feature_graph(const torch::Tensor& features);

/// Sum over ordered pairs i != j of the Bernoulli KL divergence
/// KL(W^c_ij || W^a_ij), weights clamped to [1e-7, 1 - 1e-7] first.
torch::Tensor genetic_regularization_loss(const GraphPair& pair);
torch::Tensor genetic_regularization_loss(const torch::Tensor& benign_weights, const torch::Tensor& adversarial_weights);

/// Debug dump of nodes / rho / weights as a packed array file.
void dump_feature_graph(const std::filesystem::path& path, const FeatureGraph& graph);

}  // namespace genaf
