#include "genaf/model.hpp"

#include <cmath>

#include "genaf/error.hpp"
#include "genaf/hash.hpp"

namespace genaf {
namespace {

using Kind = OpSpec::Kind;

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::conv: return "conv";
    case Kind::batchnorm: return "batchnorm";
    case Kind::relu: return "relu";
    case Kind::maxpool: return "maxpool";
    case Kind::global_avg_pool: return "global_avg_pool";
    case Kind::flatten: return "flatten";
    case Kind::linear: return "linear";
  }
  return "?";
}

Kind kind_from_name(const std::string& s) {
  for (auto k : {Kind::conv, Kind::batchnorm, Kind::relu, Kind::maxpool, Kind::global_avg_pool, Kind::flatten,
                 Kind::linear})
    if (kind_name(k) == s) return k;
  throw ConfigError("architecture: unknown op kind '" + s + "'");
}

nlohmann::json op_to_json(const OpSpec& op) {
  nlohmann::json j{{"kind", kind_name(op.kind)}};
  if (op.kind == Kind::conv || op.kind == Kind::maxpool) {
    j["kernel"] = op.kernel;
    j["stride"] = op.stride;
    j["padding"] = op.padding;
  }
  if (op.kind == Kind::conv || op.kind == Kind::linear) {
    j["out"] = op.out;
    j["bias"] = op.bias;
  }
  return j;
}

OpSpec op_from_json(const nlohmann::json& j) {
  OpSpec op;
  op.kind = kind_from_name(j.at("kind").get<std::string>());
  op.kernel = j.value("kernel", int64_t{3});
  op.stride = j.value("stride", int64_t{1});
  op.padding = j.value("padding", int64_t{1});
  op.out = j.value("out", int64_t{0});
  op.bias = j.value("bias", true);
  return op;
}

void init_uniform(torch::Tensor& t, double bound, torch::Generator& gen) {
  torch::NoGradGuard ng;
  t.uniform_(-bound, bound, gen);
}

}  // namespace

std::string_view to_string(LayerRole role) { return role == LayerRole::encoder ? "encoder" : "classifier"; }

Architecture Architecture::conv_encoder(std::array<int64_t, 3> input_shape, std::vector<int64_t> channels,
                                        int64_t feature_dim, int64_t num_classes,
                                        std::vector<int64_t> classifier_hidden) {
  Architecture a;
  a.input_shape = input_shape;
  a.num_classes = num_classes;
  for (auto c : channels) {
    a.encoder.push_back({Kind::conv, c, 3, 2, 1, false});
    a.encoder.push_back({Kind::batchnorm});
    a.encoder.push_back({Kind::relu});
  }
  a.encoder.push_back({Kind::global_avg_pool});
  a.encoder.push_back({Kind::linear, feature_dim});
  for (auto h : classifier_hidden) {
    a.classifier.push_back({Kind::linear, h});
    a.classifier.push_back({Kind::relu});
  }
  a.classifier.push_back({Kind::linear, num_classes});
  return a;
}

Architecture Architecture::mlp(std::array<int64_t, 3> input_shape, std::vector<int64_t> encoder_widths,
                               int64_t num_classes, std::vector<int64_t> classifier_hidden, bool bias) {
  Architecture a;
  a.input_shape = input_shape;
  a.num_classes = num_classes;
  a.encoder.push_back({Kind::flatten});
  for (size_t i = 0; i < encoder_widths.size(); ++i) {
    if (i > 0) a.encoder.push_back({Kind::relu});
    a.encoder.push_back({Kind::linear, encoder_widths[i], 3, 1, 1, bias});
  }
  for (auto h : classifier_hidden) {
    a.classifier.push_back({Kind::linear, h, 3, 1, 1, bias});
    a.classifier.push_back({Kind::relu});
  }
  a.classifier.push_back({Kind::linear, num_classes, 3, 1, 1, bias});
  return a;
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json j;
  j["input_shape"] = input_shape;
  j["num_classes"] = num_classes;
  j["encoder"] = nlohmann::json::array();
  j["classifier"] = nlohmann::json::array();
  for (const auto& op : encoder) j["encoder"].push_back(op_to_json(op));
  for (const auto& op : classifier) j["classifier"].push_back(op_to_json(op));
  return j;
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  try {
    Architecture a;
    a.input_shape = j.at("input_shape").get<std::array<int64_t, 3>>();
    a.num_classes = j.at("num_classes").get<int64_t>();
    for (const auto& op : j.at("encoder")) a.encoder.push_back(op_from_json(op));
    for (const auto& op : j.at("classifier")) a.classifier.push_back(op_from_json(op));
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture descriptor: ") + e.what());
  }
}

bool Architecture::operator==(const Architecture& o) const { return to_json() == o.to_json(); }

// ---------------------------------------------------------------------------

DownstreamModel::DownstreamModel(Architecture arch, uint64_t seed)
    : arch_(std::move(arch)), impl_(std::make_shared<Impl>()) {
  build();
  reinitialize(LayerRole::encoder, seed);
  reinitialize(LayerRole::classifier, seed ^ 0x9e3779b97f4a7c15ull);
}

void DownstreamModel::build() {
  if (arch_.num_classes < 1) throw ConfigError("num_classes must be positive");
  if (arch_.classifier.empty() || arch_.classifier.back().kind != Kind::linear ||
      arch_.classifier.back().out != arch_.num_classes)
    throw ConfigError("classifier must end with a linear layer producing num_classes outputs");

  impl_->root = std::make_shared<torch::nn::Module>("DownstreamModel");
  // Symbolic shape: {C, H, W} while spatial, {D} once flat.
  std::vector<int64_t> shape(arch_.input_shape.begin(), arch_.input_shape.end());
  for (int64_t v : shape)
    if (v < 1) throw ConfigError("input_shape entries must be positive");

  auto add_ops = [&](const std::vector<OpSpec>& specs, LayerRole role) {
    int conv_i = 0, bn_i = 0, lin_i = 0;
    const std::string prefix(to_string(role));
    for (const auto& spec : specs) {
      Op op{spec, "", role};
      switch (spec.kind) {
        case Kind::conv: {
          if (shape.size() != 3) throw ConfigError("conv after flattening");
          op.id = prefix + ".conv" + std::to_string(conv_i++);
          op.conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(shape[0], spec.out, spec.kernel)
                                          .stride(spec.stride)
                                          .padding(spec.padding)
                                          .bias(spec.bias));
          impl_->root->register_module(prefix + "_conv" + std::to_string(conv_i - 1), op.conv);
          shape = {spec.out, (shape[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1,
                   (shape[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1};
          break;
        }
        case Kind::batchnorm: {
          op.id = prefix + ".bn" + std::to_string(bn_i++);
          if (shape.size() == 3) {
            op.bn2d = torch::nn::BatchNorm2d(shape[0]);
            impl_->root->register_module(prefix + "_bn" + std::to_string(bn_i - 1), op.bn2d);
          } else {
            op.bn1d = torch::nn::BatchNorm1d(shape[0]);
            impl_->root->register_module(prefix + "_bn" + std::to_string(bn_i - 1), op.bn1d);
          }
          break;
        }
        case Kind::maxpool:
          if (shape.size() != 3) throw ConfigError("maxpool after flattening");
          shape = {shape[0], (shape[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1,
                   (shape[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1};
          break;
        case Kind::global_avg_pool:
          if (shape.size() != 3) throw ConfigError("global pooling after flattening");
          shape = {shape[0]};
          break;
        case Kind::flatten:
          if (shape.size() == 3) shape = {shape[0] * shape[1] * shape[2]};
          break;
        case Kind::linear: {
          if (shape.size() != 1) throw ConfigError("linear layer needs flat input; add flatten or pooling");
          op.id = prefix + ".linear" + std::to_string(lin_i++);
          op.linear = torch::nn::Linear(torch::nn::LinearOptions(shape[0], spec.out).bias(spec.bias));
          impl_->root->register_module(prefix + "_linear" + std::to_string(lin_i - 1), op.linear);
          shape = {spec.out};
          break;
        }
        case Kind::relu: break;
      }
      for (auto v : shape)
        if (v < 1) throw ConfigError("architecture collapses spatial size to zero");
      impl_->ops.push_back(std::move(op));
    }
    if (role == LayerRole::encoder && shape.size() != 1)
      throw ConfigError("encoder must end with a flat feature vector (add pooling or flatten)");
  };
  add_ops(arch_.encoder, LayerRole::encoder);
  add_ops(arch_.classifier, LayerRole::classifier);
  rebuild_records();
}

void DownstreamModel::rebuild_records() {
  auto& records = impl_->records;
  records.clear();
  for (const auto& op : impl_->ops) {
    if (!op.spec.has_params()) continue;
    LayerRecord r;
    r.layer_id = op.id;
    r.role = op.role;
    r.is_norm = op.spec.kind == Kind::batchnorm;
    std::shared_ptr<torch::nn::Module> m;
    if (op.conv) m = op.conv.ptr();
    if (op.bn2d) m = op.bn2d.ptr();
    if (op.bn1d) m = op.bn1d.ptr();
    if (op.linear) m = op.linear.ptr();
    for (const auto& p : m->named_parameters(/*recurse=*/false)) {
      r.param_names.push_back(p.key());
      r.params.push_back(p.value());
      r.param_count += p.value().numel();
    }
    records.push_back(std::move(r));
  }
}

const LayerRecord& DownstreamModel::layer(std::string_view layer_id) const {
  for (const auto& r : impl_->records)
    if (r.layer_id == layer_id) return r;
  throw InputError("unknown layer id '" + std::string(layer_id) + "'");
}

bool DownstreamModel::has_layer(std::string_view layer_id) const {
  for (const auto& r : impl_->records)
    if (r.layer_id == layer_id) return true;
  return false;
}

std::vector<torch::Tensor> DownstreamModel::parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& r : impl_->records) out.insert(out.end(), r.params.begin(), r.params.end());
  return out;
}

std::vector<torch::Tensor> DownstreamModel::parameters(LayerRole role) const {
  std::vector<torch::Tensor> out;
  for (const auto& r : impl_->records)
    if (r.role == role) out.insert(out.end(), r.params.begin(), r.params.end());
  return out;
}

int64_t DownstreamModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : impl_->root->parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, torch::Tensor>> DownstreamModel::named_state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& op : impl_->ops) {
    if (!op.spec.has_params()) continue;
    const auto& rec = layer(op.id);
    for (size_t i = 0; i < rec.params.size(); ++i) out.emplace_back(op.id + "." + rec.param_names[i], rec.params[i]);
    std::shared_ptr<torch::nn::Module> m;
    if (op.bn2d) m = op.bn2d.ptr();
    if (op.bn1d) m = op.bn1d.ptr();
    if (m)
      for (const auto& b : m->named_buffers(false)) out.emplace_back(op.id + "." + b.key(), b.value());
  }
  return out;
}

torch::Tensor DownstreamModel::run(const Op& op, torch::Tensor x) const {
  switch (op.spec.kind) {
    case Kind::conv: return op.conv.ptr()->forward(x);
    case Kind::batchnorm: return op.bn2d ? op.bn2d.ptr()->forward(x) : op.bn1d.ptr()->forward(x);
    case Kind::relu: return torch::relu(x);
    case Kind::maxpool:
      return torch::max_pool2d(x, {op.spec.kernel, op.spec.kernel}, {op.spec.stride, op.spec.stride},
                               {op.spec.padding, op.spec.padding});
    case Kind::global_avg_pool: return x.mean({2, 3});
    case Kind::flatten: return x.flatten(1);
    case Kind::linear: return op.linear.ptr()->forward(x);
  }
  return x;
}

ForwardOutput DownstreamModel::forward(const torch::Tensor& pixels) const {
  torch::Tensor x = pixels;
  ForwardOutput out;
  for (const auto& op : impl_->ops) {
    if (op.role == LayerRole::classifier && !out.features.defined()) out.features = x;
    x = run(op, x);
  }
  out.logits = x;
  return out;
}

void DownstreamModel::train(bool on) { impl_->root->train(on); }

void DownstreamModel::set_layer_training(std::string_view layer_id, bool on) {
  for (auto& op : impl_->ops) {
    if (op.id != layer_id) continue;
    if (op.bn2d) op.bn2d->train(on);
    if (op.bn1d) op.bn1d->train(on);
    if (op.conv) op.conv->train(on);
    if (op.linear) op.linear->train(on);
    return;
  }
  throw InputError("unknown layer id '" + std::string(layer_id) + "'");
}

std::vector<bool> DownstreamModel::training_flags() const {
  std::vector<bool> flags{impl_->root->is_training()};
  for (const auto& m : impl_->root->children()) flags.push_back(m->is_training());
  return flags;
}

void DownstreamModel::set_training_flags(const std::vector<bool>& flags) {
  auto children = impl_->root->children();
  if (flags.size() != children.size() + 1) throw InputError("training flag count mismatch");
  impl_->root->train(flags[0]);  // recursive; children fixed up below
  for (size_t i = 0; i < children.size(); ++i) children[i]->train(flags[i + 1]);
}

void DownstreamModel::reinitialize(LayerRole role, uint64_t seed) {
  auto gen = make_generator(seed);
  torch::NoGradGuard ng;
  for (auto& op : impl_->ops) {
    if (op.role != role) continue;
    if (op.conv) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(op.conv->weight[0].numel()));
      init_uniform(op.conv->weight, bound, gen);
      if (op.conv->bias.defined()) init_uniform(op.conv->bias, bound, gen);
    } else if (op.linear) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(op.linear->weight.size(1)));
      init_uniform(op.linear->weight, bound, gen);
      if (op.linear->bias.defined()) init_uniform(op.linear->bias, bound, gen);
    } else if (op.bn2d) {
      op.bn2d->reset_parameters();
    } else if (op.bn1d) {
      op.bn1d->reset_parameters();
    }
  }
}

void DownstreamModel::set_requires_grad(bool on) {
  for (auto& p : impl_->root->parameters()) p.set_requires_grad(on);
}

torch::Dtype DownstreamModel::dtype() const {
  return impl_->records.empty() ? torch::kFloat32 : impl_->records.front().params.front().scalar_type();
}

void DownstreamModel::to(torch::Dtype dtype) {
  // Module::to would also cast the int64 num_batches_tracked buffers.
  torch::NoGradGuard ng;
  for (auto& p : impl_->root->parameters()) p.set_data(p.data().to(dtype));
  for (auto& b : impl_->root->buffers())
    if (b.is_floating_point()) b.set_data(b.data().to(dtype));
  rebuild_records();
}

DownstreamModel DownstreamModel::clone() const {
  DownstreamModel copy(arch_, 0);
  copy.to(dtype());
  restore_params(copy, snapshot_params(*this));
  copy.set_training_flags(training_flags());
  return copy;
}

// ---------------------------------------------------------------------------

ForwardOutput forward(const DownstreamModel& model, const ImageBatch& batch) {
  const auto& shape = model.architecture().input_shape;
  const auto& px = batch.pixels;
  if (!px.defined() || px.dim() != 4 || px.size(1) != shape[0] || px.size(2) != shape[1] ||
      px.size(3) != shape[2])
    throw ConfigError("forward: batch shape does not match the architecture input (" + std::to_string(shape[0]) +
                      "x" + std::to_string(shape[1]) + "x" + std::to_string(shape[2]) + ")");
  if (px.size(0) < 1) throw InputError("forward: empty batch");
  auto out = model.forward(px.to(model.dtype()));
  if (!torch::isfinite(out.logits).all().item<bool>()) {
    for (const auto& rec : model.layers())
      for (const auto& p : rec.params)
        if (!torch::isfinite(p).all().item<bool>())
          throw NumericalError("forward: non-finite parameters in layer " + rec.layer_id);
    throw NumericalError("forward: non-finite logits");
  }
  return out;
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0))
    throw InputError("cross_entropy: expected logits (N, K) and labels (N)");
  const auto k = logits.size(1);
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= k))
    throw InputError("cross_entropy: label outside [0, " + std::to_string(k) + ")");
  return torch::nn::functional::cross_entropy(logits, labels);
}

torch::Tensor predict_labels(const torch::Tensor& logits) {
  auto l = logits.detach();
  auto best = std::get<0>(l.max(1, /*keepdim=*/true));
  const auto k = l.size(1);
  auto idx = torch::arange(k, torch::kLong).unsqueeze(0).expand_as(l);
  auto masked = torch::where(l == best, idx, torch::full_like(idx, k));
  return std::get<0>(masked.min(1));
}

ParameterSnapshot snapshot_params(const DownstreamModel& model) {
  ParameterSnapshot s;
  s.architecture = model.architecture().to_json();
  for (const auto& [name, t] : model.named_state()) s.entries.emplace_back(name, t.detach().clone());
  return s;
}

void restore_params(DownstreamModel& model, const ParameterSnapshot& snapshot) {
  if (snapshot.architecture != model.architecture().to_json())
    throw ConfigError("restore_params: snapshot comes from a different architecture");
  auto state = model.named_state();
  if (state.size() != snapshot.entries.size()) throw ConfigError("restore_params: entry count mismatch");
  torch::NoGradGuard ng;
  for (size_t i = 0; i < state.size(); ++i) {
    const auto& [name, dst] = state[i];
    const auto& [sname, src] = snapshot.entries[i];
    if (name != sname || dst.sizes() != src.sizes())
      throw ConfigError("restore_params: mismatch at " + name);
    dst.copy_(src);
  }
}

namespace {
bool tensor_bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.scalar_type() != b.scalar_type() || a.sizes() != b.sizes()) return false;
  auto ca = a.contiguous();
  auto cb = b.contiguous();
  return std::memcmp(ca.data_ptr(), cb.data_ptr(), ca.numel() * ca.element_size()) == 0;
}
}  // namespace

bool bitwise_equal(const ParameterSnapshot& a, const ParameterSnapshot& b) {
  if (a.architecture != b.architecture || a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].first != b.entries[i].first || !tensor_bitwise_equal(a.entries[i].second, b.entries[i].second))
      return false;
  return true;
}

bool layer_bitwise_equal(const ParameterSnapshot& a, const ParameterSnapshot& b, std::string_view layer_id) {
  const std::string prefix = std::string(layer_id) + ".";
  bool found = false;
  for (size_t i = 0; i < a.entries.size() && i < b.entries.size(); ++i) {
    if (!a.entries[i].first.starts_with(prefix)) continue;
    found = true;
    if (a.entries[i].first != b.entries[i].first || !tensor_bitwise_equal(a.entries[i].second, b.entries[i].second))
      return false;
  }
  if (!found) throw InputError("layer_bitwise_equal: unknown layer id '" + std::string(layer_id) + "'");
  return true;
}

std::string model_hash(const DownstreamModel& model) {
  Sha256 h;
  h.update(model.architecture().to_json().dump());
  for (const auto& [name, t] : model.named_state()) {
    auto c = t.detach().contiguous();
    h.update(name);
    h.update(c.data_ptr(), static_cast<size_t>(c.numel() * c.element_size()));
  }
  return h.hex_digest();
}

torch::Tensor predict_logits(DownstreamModel& model, const ImageBatch& data, int64_t batch_size) {
  torch::NoGradGuard ng;
  EvalModeGuard guard(model);
  std::vector<torch::Tensor> parts;
  for (int64_t b = 0; b < data.size(); b += batch_size) {
    auto px = data.pixels.slice(0, b, std::min(data.size(), b + batch_size));
    parts.push_back(forward(model, ImageBatch{px, {}}).logits);
  }
  return torch::cat(parts, 0);
}

}  // namespace genaf
