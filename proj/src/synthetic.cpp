#include "genaf/synthetic.hpp"

#include <numbers>

#include "genaf/error.hpp"

namespace genaf {

std::string_view to_string(SyntheticStyle s) { return s == SyntheticStyle::shapes ? "shapes" : "blobs"; }

SyntheticStyle parse_synthetic_style(std::string_view text) {
  if (text == "shapes") return SyntheticStyle::shapes;
  if (text == "blobs") return SyntheticStyle::blobs;
  throw ConfigError("unknown synthetic style '" + std::string(text) + "'");
}

namespace {

using torch::Tensor;
constexpr int64_t kMaxShapes = 6;

Tensor col(const Tensor& v) { return v.view({-1, 1, 1}); }

// Signed distance (pixels) to the boundary of shape `kind`; negative inside.
// r: shape radius, len/thick: bar half-length and half-thickness.
Tensor signed_distance(int64_t kind, const Tensor& dx, const Tensor& dy, const Tensor& r, const Tensor& len,
                       const Tensor& thick) {
  switch (kind) {
    case 0:  // horizontal bar
      return torch::maximum(dx.abs() - len, dy.abs() - thick);
    case 1:  // vertical bar
      return torch::maximum(dy.abs() - len, dx.abs() - thick);
    case 2:  // disk
      return (dx.square() + dy.square()).sqrt() - r;
    case 3:  // plus-shaped cross
      return torch::minimum(torch::maximum(dx.abs() - 0.3 * r, dy.abs() - r),
                            torch::maximum(dy.abs() - 0.3 * r, dx.abs() - r));
    case 4:  // ring
      return ((dx.square() + dy.square()).sqrt() - 0.7 * r).abs() - 0.3 * r;
    default:  // square
      return torch::maximum(dx.abs(), dy.abs()) - 0.85 * r;
  }
}

Tensor uniform(torch::Generator& gen, std::vector<int64_t> shape, double lo, double hi) {
  return torch::rand(shape, gen, torch::kFloat64) * (hi - lo) + lo;
}

}  // namespace

ImageBatch generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_samples < 1) throw InputError("synthetic: num_samples must be >= 1");
  if (cfg.num_classes < 1) throw InputError("synthetic: num_classes must be >= 1");
  if (cfg.style == SyntheticStyle::shapes && cfg.num_classes > kMaxShapes)
    throw InputError("synthetic: shapes style supports at most 6 classes");
  if (cfg.image_size < 8) throw InputError("synthetic: image_size must be >= 8");
  if (cfg.channels != 1 && cfg.channels != 3) throw InputError("synthetic: channels must be 1 or 3");

  auto gen = make_generator(cfg.seed);
  const int64_t n = cfg.num_samples;
  const int64_t s = cfg.image_size;
  const int64_t c = cfg.channels;
  auto labels = torch::arange(n, torch::kLong).remainder(cfg.num_classes);
  labels = labels.index_select(0, torch::randperm(n, gen, torch::kLong));

  auto coords = torch::arange(s, torch::kFloat64) + 0.5;
  auto yy = coords.view({1, s, 1}).expand({n, s, s});
  auto xx = coords.view({1, 1, s}).expand({n, s, s});
  const double scale = static_cast<double>(s) / 32.0;

  // Background: base colour plus a linear shading ramp.
  auto bg = uniform(gen, {n, c}, 0.2, 0.8);
  auto theta = uniform(gen, {n}, 0.0, 2.0 * std::numbers::pi);
  auto ramp_amp = uniform(gen, {n}, 0.0, 0.15);
  auto ramp = ((xx / s - 0.5) * col(theta.cos()) + (yy / s - 0.5) * col(theta.sin())) * col(ramp_amp);
  auto image = bg.view({n, c, 1, 1}) + ramp.unsqueeze(1);

  Tensor mask;
  if (cfg.style == SyntheticStyle::shapes) {
    auto cx = uniform(gen, {n}, 11.0, 21.0) * scale;
    auto cy = uniform(gen, {n}, 11.0, 21.0) * scale;
    auto r = uniform(gen, {n}, 6.0, 9.0) * scale;
    auto len = uniform(gen, {n}, 9.0, 13.0) * scale;
    auto thick = uniform(gen, {n}, 2.0, 3.5) * scale;
    auto dx = xx - col(cx);
    auto dy = yy - col(cy);
    auto sd = torch::zeros({n, s, s}, torch::kFloat64);
    for (int64_t k = 0; k < cfg.num_classes; ++k) {
      auto sel = (labels == k).to(torch::kFloat64);
      sd = sd + col(sel) * signed_distance(k, dx, dy, col(r), col(len), col(thick));
    }
    mask = torch::sigmoid(-sd / 0.5);
  } else {
    // Elongated blob; parity of the class picks horizontal or vertical.
    auto vertical = labels.remainder(2).to(torch::kFloat64);
    auto cx = uniform(gen, {n}, 12.0, 20.0) * scale;
    auto cy = uniform(gen, {n}, 12.0, 20.0) * scale;
    auto long_sigma = uniform(gen, {n}, 5.0, 7.0) * scale;
    auto short_sigma = uniform(gen, {n}, 1.5, 2.5) * scale;
    auto sx = col(vertical * short_sigma + (1.0 - vertical) * long_sigma);
    auto sy = col(vertical * long_sigma + (1.0 - vertical) * short_sigma);
    auto d2 = ((xx - col(cx)) / sx).square() + ((yy - col(cy)) / sy).square();
    mask = torch::exp(-d2 / 2.0);
  }

  // Foreground colour at least `min_contrast` away from the background in one channel.
  auto offset = uniform(gen, {n, c}, cfg.min_contrast, cfg.min_contrast + 0.2);
  auto sign = torch::where(bg > 0.5, -torch::ones_like(bg), torch::ones_like(bg));
  auto flip = uniform(gen, {n, c}, 0.0, 1.0) < 0.3;
  offset = torch::where(flip, offset * 0.3, offset);
  auto fg = (bg + sign * offset).clamp(0.0, 1.0);
  image = image + mask.unsqueeze(1) * (fg - bg).view({n, c, 1, 1});
  if (cfg.noise > 0.0) image = image + torch::randn({n, c, s, s}, gen, torch::kFloat64) * cfg.noise;
  return {image.clamp(0.0, 1.0).to(torch::kFloat32).contiguous(), labels};
}

}  // namespace genaf
