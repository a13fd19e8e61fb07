#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <json.hpp>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "genaf/data.hpp"

namespace genaf {

enum class LayerRole { encoder, classifier };

std::string_view to_string(LayerRole role);

/// One operation in the encoder or classifier stack.
struct OpSpec {
  enum class Kind { conv, batchnorm, relu, maxpool, global_avg_pool, flatten, linear };
  Kind kind = Kind::relu;
  int64_t out = 0;  // conv output channels / linear output features
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t padding = 1;
  bool bias = true;

  bool has_params() const { return kind == Kind::conv || kind == Kind::batchnorm || kind == Kind::linear; }
};

/// Architecture descriptor. The classifier's last op must be a linear layer with
/// `num_classes` outputs; the encoder must end in a (N, d) feature tensor.
struct Architecture {
  std::array<int64_t, 3> input_shape{3, 32, 32};
  std::vector<OpSpec> encoder;
  std::vector<OpSpec> classifier;
  int64_t num_classes = 2;

  /// conv-bn-relu blocks (stride 2 each), global pooling, linear projection to
  /// `feature_dim`, then the classifier (hidden linear+relu layers, then output).
  static Architecture conv_encoder(std::array<int64_t, 3> input_shape, std::vector<int64_t> channels,
                                   int64_t feature_dim, int64_t num_classes,
                                   std::vector<int64_t> classifier_hidden = {});
  /// Flatten, optional hidden linear layers, linear projection; used by toy tests.
  static Architecture mlp(std::array<int64_t, 3> input_shape, std::vector<int64_t> encoder_widths,
                          int64_t num_classes, std::vector<int64_t> classifier_hidden = {}, bool bias = true);

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  bool operator==(const Architecture&) const;
};

/// A named parameter group: one weight-bearing op (weight + bias, or BN affine).
struct LayerRecord {
  std::string layer_id;
  LayerRole role = LayerRole::encoder;
  bool is_norm = false;
  std::vector<std::string> param_names;  // "weight", "bias"
  std::vector<torch::Tensor> params;     // handles into the live module
  int64_t param_count = 0;
};

struct ForwardOutput {
  torch::Tensor features;  // (N, d)
  torch::Tensor logits;    // (N, num_classes)
};

/// Encoder + classifier composite with a deterministic layer registry.
/// Copying shares parameters; use `clone()` for an independent model.
class DownstreamModel {
 public:
  DownstreamModel(Architecture arch, uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  int64_t num_classes() const { return arch_.num_classes; }
  const std::vector<LayerRecord>& layers() const { return impl_->records; }
  /// Throws InputError for an unknown id.
  const LayerRecord& layer(std::string_view layer_id) const;
  bool has_layer(std::string_view layer_id) const;

  std::vector<torch::Tensor> parameters() const;
  std::vector<torch::Tensor> parameters(LayerRole role) const;
  int64_t parameter_count() const;

  /// Parameters and normalization buffers keyed "layer_id.name", registry order.
  std::vector<std::pair<std::string, torch::Tensor>> named_state() const;

  /// Raw forward pass without batch validation.
  ForwardOutput forward(const torch::Tensor& pixels) const;

  void train(bool on = true);
  void eval() { train(false); }
  /// Per-layer statistics mode; only meaningful for normalization layers.
  void set_layer_training(std::string_view layer_id, bool on);
  bool is_training() const { return impl_->root->is_training(); }
  std::vector<bool> training_flags() const;
  void set_training_flags(const std::vector<bool>& flags);

  void reinitialize(LayerRole role, uint64_t seed);
  void set_requires_grad(bool on);

  torch::Dtype dtype() const;
  void to(torch::Dtype dtype);

  DownstreamModel clone() const;

 private:
  struct Op {
    OpSpec spec;
    std::string id;
    LayerRole role;
    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d bn2d{nullptr};
    torch::nn::BatchNorm1d bn1d{nullptr};
    torch::nn::Linear linear{nullptr};
  };
  struct Impl {
    std::shared_ptr<torch::nn::Module> root;
    std::vector<Op> ops;
    std::vector<LayerRecord> records;
  };

  void build();
  void rebuild_records();
  torch::Tensor run(const Op& op, torch::Tensor x) const;

  Architecture arch_;
  std::shared_ptr<Impl> impl_;
};

/// Puts the model in eval mode and restores every per-layer mode on scope exit.
class EvalModeGuard {
 public:
  explicit EvalModeGuard(DownstreamModel& model) : model_(model), flags_(model.training_flags()) { model_.eval(); }
  ~EvalModeGuard() { model_.set_training_flags(flags_); }
  EvalModeGuard(const EvalModeGuard&) = delete;
  EvalModeGuard& operator=(const EvalModeGuard&) = delete;

 private:
  DownstreamModel& model_;
  std::vector<bool> flags_;
};

/// Validated forward: batch must match the architecture's input shape
/// (ConfigError otherwise); non-finite outputs raise NumericalError.
ForwardOutput forward(const DownstreamModel& model, const ImageBatch& batch);

/// Mean softmax cross-entropy. Labels must lie in [0, K) (InputError otherwise).
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

/// Row-wise argmax; ties resolve to the lowest class index.
torch::Tensor predict_labels(const torch::Tensor& logits);

struct ParameterSnapshot {
  nlohmann::json architecture;
  std::vector<std::pair<std::string, torch::Tensor>> entries;
};

ParameterSnapshot snapshot_params(const DownstreamModel& model);
/// Bitwise restore. Throws ConfigError when the snapshot is from another architecture.
void restore_params(DownstreamModel& model, const ParameterSnapshot& snapshot);

/// True when every parameter and buffer is bitwise equal.
bool bitwise_equal(const ParameterSnapshot& a, const ParameterSnapshot& b);
/// Bitwise equality restricted to one layer's parameters.
bool layer_bitwise_equal(const ParameterSnapshot& a, const ParameterSnapshot& b, std::string_view layer_id);

/// SHA-256 over architecture and every parameter/buffer byte.
std::string model_hash(const DownstreamModel& model);

/// Logits over a dataset evaluated in mini-batches under no-grad, eval mode.
torch::Tensor predict_logits(DownstreamModel& model, const ImageBatch& data, int64_t batch_size = 256);

}  // namespace genaf
