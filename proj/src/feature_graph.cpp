#include "genaf/feature_graph.hpp"

#include <limits>

#include "genaf/error.hpp"
#include "genaf/packed_array.hpp"

namespace genaf {

torch::Tensor cosine_distance_matrix(const torch::Tensor& features) {
  auto norms = features.norm(2, 1, /*keepdim=*/true);
  auto unit = features / norms;
  return (1.0 - unit.matmul(unit.t())).clamp(0.0, 2.0);
}

FeatureGraph build_feature_graph(const torch::Tensor& features) {
  if (features.dim() != 2) throw InputError("feature graph: features must be (N, d)");
  const auto n = features.size(0);
  if (n < 2) throw InputError("feature graph: need at least 2 nodes, got " + std::to_string(n));

  auto zero_rows = (features.detach().norm(2, 1) == 0).nonzero();
  if (zero_rows.size(0) > 0)
    throw NumericalError("feature graph: zero-norm feature vector at row " +
                         std::to_string(zero_rows[0][0].item<int64_t>()));

  auto dist = cosine_distance_matrix(features);
  auto eye = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  auto rho = std::get<0>(dist.masked_fill(eye, std::numeric_limits<double>::infinity()).min(1));

  // a_ik = 2 - (d_ik - rho_k): the target's offset broadcasts along each column.
  auto affinity = (2.0 - (dist - rho.unsqueeze(0))).masked_fill(eye, 0.0);
  auto row_sum = affinity.sum(1, /*keepdim=*/true);
  // A row sums to zero only when every target sits antipodal to it and has an exact
  // twin; fall back to uniform weights for that row.
  auto uniform = torch::full_like(affinity, 1.0 / static_cast<double>(n - 1)).masked_fill(eye, 0.0);
  auto degenerate = row_sum <= 1e-12;
  auto weights = torch::where(degenerate, uniform, affinity / torch::where(degenerate, torch::ones_like(row_sum), row_sum));
  return {features, rho, weights};
}

torch::Tensor genetic_regularization_loss(const torch::Tensor& wc, const torch::Tensor& wa) {
  if (wc.dim() != 2 || wc.sizes() != wa.sizes() || wc.size(0) != wc.size(1))
    throw InputError("genetic loss: weight matrices must be square and equally sized");
  const auto n = wc.size(0);
  auto offdiag = ~torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  auto c = wc.clamp(kWeightClamp, 1.0 - kWeightClamp);
  auto a = wa.clamp(kWeightClamp, 1.0 - kWeightClamp);
  auto kl = c * torch::log(c / a) + (1.0 - c) * torch::log((1.0 - c) / (1.0 - a));
  // Each term is >= 0 exactly; float32 round-off near c == a can dip below.
  kl = kl.clamp_min(0.0);
  return kl.masked_select(offdiag).sum();
}

torch::Tensor genetic_regularization_loss(const GraphPair& pair) {
  if (!pair.aligned) throw InputError("genetic loss: graph pair is not sample-aligned");
  if (!pair.benign.weights.defined() || !pair.adversarial.weights.defined() ||
      pair.benign.weights.sizes() != pair.adversarial.weights.sizes())
    throw InputError("genetic loss: benign and adversarial graphs differ in size");
  return genetic_regularization_loss(pair.benign.weights, pair.adversarial.weights);
}

void dump_feature_graph(const std::filesystem::path& path, const FeatureGraph& graph) {
  PackedFile f;
  f.arrays.push_back({"nodes", graph.nodes.detach()});
  f.arrays.push_back({"rho", graph.rho.detach()});
  f.arrays.push_back({"weights", graph.weights.detach()});
  write_packed(path, f);
}

}  // namespace genaf
