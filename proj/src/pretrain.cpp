#include "genaf/pretrain.hpp"

#include <numbers>

#include "genaf/checkpoint.hpp"
#include "genaf/error.hpp"

namespace genaf {

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("pretrain.batch_size must be >= 2");
  if (!(temperature > 0.0)) throw ConfigError("pretrain.temperature must be > 0");
  if (!(lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (projection_dim < 1) throw ConfigError("pretrain.projection_dim must be >= 1");
  if (!(augment.crop_scale_min > 0.0 && augment.crop_scale_min <= 1.0))
    throw ConfigError("pretrain crop scale must lie in (0, 1]");
  const auto& a = augment;
  if (a.brightness < 0 || a.contrast < 0 || a.saturation < 0 || a.hue < 0 || a.hue > 1 || a.grayscale < 0 ||
      a.grayscale > 1)
    throw ConfigError("pretrain colour jitter strengths out of range");
}

torch::Tensor augment(const torch::Tensor& pixels, const AugmentConfig& cfg, torch::Generator& gen) {
  namespace F = torch::nn::functional;
  const auto n = pixels.size(0);
  auto opts = pixels.options();
  auto rand = [&](double lo, double hi) { return torch::rand({n}, gen, opts) * (hi - lo) + lo; };

  // Random resized crop (square, area fraction in [crop_scale_min, 1]) with optional flip.
  auto side = rand(cfg.crop_scale_min, 1.0).sqrt();
  auto tx = (rand(0.0, 1.0) * 2.0 - 1.0) * (1.0 - side);
  auto ty = (rand(0.0, 1.0) * 2.0 - 1.0) * (1.0 - side);
  auto sx = side;
  if (cfg.horizontal_flip) sx = torch::where(rand(0.0, 1.0) < 0.5, -side, side);
  auto zeros = torch::zeros({n}, opts);
  auto theta = torch::stack({torch::stack({sx, zeros, tx}, 1), torch::stack({zeros, side, ty}, 1)}, 1);
  auto grid = F::affine_grid(theta, pixels.sizes().vec(), /*align_corners=*/false);
  auto x = F::grid_sample(pixels, grid,
                          F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));

  auto view = [&](const torch::Tensor& t) { return t.view({n, 1, 1, 1}); };
  if (cfg.brightness > 0) x = x * view(rand(1.0 - cfg.brightness, 1.0 + cfg.brightness));
  if (cfg.contrast > 0) {
    auto mean = x.mean({1, 2, 3}, true);
    x = (x - mean) * view(rand(1.0 - cfg.contrast, 1.0 + cfg.contrast)) + mean;
  }
  if (cfg.saturation > 0 && x.size(1) == 3) {
    auto gray = (0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2)).unsqueeze(1);
    x = (x - gray) * view(rand(1.0 - cfg.saturation, 1.0 + cfg.saturation)) + gray;
  }
  if (cfg.hue > 0 && x.size(1) == 3) {
    // Rodrigues rotation about (1,1,1)/sqrt(3), one angle per sample.
    auto angle = rand(-cfg.hue * std::numbers::pi, cfg.hue * std::numbers::pi);
    auto c = angle.cos().view({n, 1, 1});
    auto s = angle.sin().view({n, 1, 1});
    const double k = 1.0 / std::sqrt(3.0);
    auto kk = torch::full({3, 3}, k * k, opts);
    auto cross = torch::tensor({{0.0, -k, k}, {k, 0.0, -k}, {-k, k, 0.0}}, opts);
    auto rot = c * torch::eye(3, opts) + s * cross + (1.0 - c) * kk;
    x = torch::einsum("nij,njhw->nihw", {rot, x});
  }
  if (cfg.grayscale > 0 && x.size(1) == 3) {
    auto gray = (0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2)).unsqueeze(1);
    x = torch::where(view(rand(0.0, 1.0)) < cfg.grayscale, gray.expand_as(x), x);
  }
  return x.clamp(0.0, 1.0);
}

torch::Tensor nt_xent_loss(const torch::Tensor& z1, const torch::Tensor& z2, double temperature) {
  const auto n = z1.size(0);
  auto z = torch::nn::functional::normalize(torch::cat({z1, z2}, 0), torch::nn::functional::NormalizeFuncOptions().dim(1));
  auto sim = z.matmul(z.t()) / temperature;
  auto eye = torch::eye(2 * n, torch::TensorOptions().dtype(torch::kBool));
  sim = sim.masked_fill(eye, -1e9);
  auto idx = torch::arange(n, torch::kLong);
  auto targets = torch::cat({idx + n, idx});
  return torch::nn::functional::cross_entropy(sim, targets);
}

namespace {

struct ProjectionHead : torch::nn::Module {
  ProjectionHead(int64_t in, int64_t out, uint64_t seed) {
    fc1 = register_module("fc1", torch::nn::Linear(in, in));
    fc2 = register_module("fc2", torch::nn::Linear(in, out));
    auto gen = make_generator(seed);
    torch::NoGradGuard ng;
    for (auto* l : {&fc1, &fc2}) {
      const double b = 1.0 / std::sqrt(static_cast<double>((*l)->weight.size(1)));
      (*l)->weight.uniform_(-b, b, gen);
      (*l)->bias.uniform_(-b, b, gen);
    }
  }
  torch::Tensor forward(const torch::Tensor& x) { return fc2(torch::relu(fc1(x))); }
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};

}  // namespace

PretrainResult pretrain_encoder(const ImageBatch& data, const Architecture& arch, const PretrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InputError("pretrain: empty dataset");
  const auto& shape = arch.input_shape;
  if (data.pixels.dim() != 4 || data.pixels.size(1) != shape[0] || data.pixels.size(2) != shape[1] ||
      data.pixels.size(3) != shape[2])
    throw InputError("pretrain: images do not match the encoder input shape");

  PretrainResult result{DownstreamModel(arch, cfg.init_seed), 0.0, {}};
  auto& model = result.model;
  if (cfg.epochs == 0) return result;

  const auto features = model.forward(data.pixels.slice(0, 0, 1)).features.size(1);
  ProjectionHead head(features, cfg.projection_dim, cfg.init_seed + 17);
  std::vector<torch::Tensor> params = model.parameters(LayerRole::encoder);
  for (const auto& p : head.parameters()) params.push_back(p);
  torch::optim::Adam adam(params, torch::optim::AdamOptions(cfg.lr));

  auto aug_gen = make_generator(cfg.augmentation_seed);
  auto shuffle_gen = make_generator(cfg.augmentation_seed + 1);
  const auto px = data.pixels.to(model.dtype());
  const int64_t batch = std::min(cfg.batch_size, px.size(0));
  if (batch < 2) throw InputError("pretrain: need at least 2 images");

  auto view_loss = [&](const torch::Tensor& x, torch::Generator& gen) {
    auto v1 = augment(x, cfg.augment, gen);
    auto v2 = augment(x, cfg.augment, gen);
    auto f = model.forward(torch::cat({v1, v2}, 0)).features;
    auto z = head.forward(f);
    return nt_xent_loss(z.slice(0, 0, x.size(0)), z.slice(0, x.size(0)), cfg.temperature);
  };

  {
    torch::NoGradGuard ng;
    EvalModeGuard guard(model);
    auto probe_gen = make_generator(cfg.augmentation_seed + 2);
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& idx : batch_indices(px.size(0), batch, false)) {
      if (idx.size(0) < 2) continue;
      sum += view_loss(px.index_select(0, idx), probe_gen).item<double>();
      ++count;
    }
    result.initial_loss = count > 0 ? sum / static_cast<double>(count) : 0.0;
  }

  model.train();
  head.train();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& idx : batch_indices(px.size(0), batch, true, &shuffle_gen)) {
      if (idx.size(0) < 2) continue;  // a lone sample has no negatives
      auto loss = view_loss(px.index_select(0, idx), aug_gen);
      const double v = loss.item<double>();
      if (!std::isfinite(v)) throw TrainingError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      loss.backward();
      adam.step();
      sum += v;
      ++count;
    }
    result.epoch_losses.push_back(sum / static_cast<double>(std::max<int64_t>(count, 1)));
  }
  model.eval();
  return result;
}

DownstreamModel pretrain_encoder(const PretrainConfig& cfg, const Architecture& arch) {
  return pretrain_encoder(load_dataset(cfg.dataset_path, arch.input_shape[0], arch.input_shape[1]), arch, cfg).model;
}

DownstreamModel load_encoder(const std::filesystem::path& path) { return load_checkpoint(path); }

}  // namespace genaf
