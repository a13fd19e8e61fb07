#include "genaf/attacks.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

#include "genaf/error.hpp"
#include "genaf/packed_array.hpp"

namespace genaf {
namespace {

std::atomic<uint64_t> g_attack_calls{0};

template <typename T>
T floor_value(double v) {
  T f = static_cast<T>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<T>::infinity());
  return f;
}

template <typename T>
T ceil_value(double v) {
  T f = static_cast<T>(v);
  if (static_cast<double>(f) < v) f = std::nextafter(f, std::numeric_limits<T>::infinity());
  return f;
}

// Enforces |out - in| <= eps and out in [0,1] exactly (compared in double), nudging
// by ulps where float rounding of x0 + δ overshot the ball.
template <typename T>
void exact_linf_fix(torch::Tensor& out, const torch::Tensor& in, double eps) {
  auto* o = out.data_ptr<T>();
  const auto* x = in.data_ptr<T>();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double lo = std::max(0.0, static_cast<double>(x[i]) - eps);
    const double hi = std::min(1.0, static_cast<double>(x[i]) + eps);
    if (static_cast<double>(o[i]) > hi) o[i] = floor_value<T>(hi);
    if (static_cast<double>(o[i]) < lo) o[i] = ceil_value<T>(lo);
  }
}

void enforce_linf(torch::Tensor& out, const torch::Tensor& in, double eps) {
  out = out.contiguous();
  auto x = in.contiguous();
  if (out.scalar_type() == torch::kFloat64)
    exact_linf_fix<double>(out, x, eps);
  else
    exact_linf_fix<float>(out, x, eps);
}

torch::Tensor per_sample_norm(const torch::Tensor& t, Norm norm) {
  auto flat = t.flatten(1);
  return norm == Norm::inf ? flat.abs().amax(1) : flat.norm(2, 1);
}

torch::Tensor bcast(const torch::Tensor& per_sample, const torch::Tensor& like) {
  std::vector<int64_t> shape(like.dim(), 1);
  shape[0] = like.size(0);
  return per_sample.view(shape);
}

// Projects x onto {x0 + δ : ‖δ‖ ≤ eps} ∩ [0,1]^d.
torch::Tensor project(const torch::Tensor& x, const torch::Tensor& x0, double eps, Norm norm) {
  auto delta = x - x0;
  if (norm == Norm::inf) {
    delta = delta.clamp(-eps, eps);
  } else {
    auto n = per_sample_norm(delta, Norm::l2);
    auto scale = torch::where(n > eps, eps / n.clamp_min(1e-30), torch::ones_like(n));
    delta = delta * bcast(scale, delta);
  }
  return (x0 + delta).clamp(0.0, 1.0);
}

// Rescales each sample's δ down until its L2 norm is within eps (float rounding).
void enforce_l2(torch::Tensor& out, const torch::Tensor& in, double eps) {
  for (int guard = 0; guard < 4; ++guard) {
    auto delta = (out - in).to(torch::kFloat64);
    auto n = per_sample_norm(delta, Norm::l2);
    if ((n <= eps).all().item<bool>()) return;
    auto scale = torch::where(n > eps, eps / n * (1.0 - 1e-6), torch::ones_like(n));
    out = (in + (delta * bcast(scale, delta)).to(in.scalar_type())).clamp(0.0, 1.0);
  }
}

torch::Tensor random_start(const torch::Tensor& x0, double eps, Norm norm, torch::Generator& gen) {
  if (norm == Norm::inf) {
    auto u = torch::rand(x0.sizes(), gen, x0.options());
    return project(x0 + (u * 2.0 - 1.0) * eps, x0, eps, norm);
  }
  auto g = torch::randn(x0.sizes(), gen, x0.options());
  auto n = per_sample_norm(g, Norm::l2).clamp_min(1e-12);
  auto r = torch::rand({x0.size(0)}, gen, x0.options()) * eps;
  return project(x0 + g * bcast(r / n, g), x0, eps, norm);
}

}  // namespace

std::string_view to_string(Norm norm) { return norm == Norm::inf ? "inf" : "2"; }

Norm parse_norm(std::string_view text) {
  if (text == "inf" || text == "linf" || text == "Linf") return Norm::inf;
  if (text == "2" || text == "l2" || text == "L2") return Norm::l2;
  throw ConfigError("unknown norm '" + std::string(text) + "' (expected inf or 2)");
}

AttackConfig AttackConfig::pgd(double epsilon, bool random_start, Norm norm) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.norm = norm;
  c.steps = 10;
  c.step_size = epsilon > 0 ? epsilon / 4.0 : 1e-3;
  c.random_start = random_start;
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("attack: step_size must be > 0");
  if (steps < 1) throw ConfigError("attack: steps must be >= 1");
}

std::string AttackConfig::descriptor() const {
  std::ostringstream os;
  os << "pgd(eps=" << epsilon << ",p=" << to_string(norm) << ",steps=" << steps << ",alpha=" << step_size
     << ",random_start=" << (random_start ? "true" : "false") << ")";
  return os.str();
}

double floor_to_dtype(double v, torch::Dtype dtype) {
  return dtype == torch::kFloat64 ? v : static_cast<double>(floor_value<float>(v));
}

uint64_t attack_invocations() { return g_attack_calls.load(); }

ImageBatch pgd_attack(DownstreamModel& model, const ImageBatch& batch, const AttackConfig& cfg,
                      torch::Generator* gen) {
  cfg.validate();
  ++g_attack_calls;
  const auto x0 = batch.pixels.detach().to(model.dtype()).contiguous();
  if (cfg.epsilon == 0.0) return {batch.pixels.clone(), batch.labels.clone()};
  if (cfg.random_start && gen == nullptr) throw InputError("pgd_attack: random_start needs a generator");

  EvalModeGuard guard(model);
  torch::Tensor x = cfg.random_start ? random_start(x0, cfg.epsilon, cfg.norm, *gen) : x0.clone();
  torch::Tensor best_x = x.clone();
  torch::Tensor best_loss;

  auto consider = [&](const torch::Tensor& xi, const torch::Tensor& loss) {
    if (!best_loss.defined()) {
      best_loss = loss.clone();
      best_x = xi.clone();
      return;
    }
    auto better = loss > best_loss;
    best_loss = torch::where(better, loss, best_loss);
    best_x = torch::where(bcast(better, xi), xi, best_x);
  };

  for (int64_t t = 0; t < cfg.steps; ++t) {
    auto xi = x.clone().requires_grad_(true);
    auto logits = model.forward(xi).logits;
    auto loss = torch::nn::functional::cross_entropy(
        logits, batch.labels, torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
    auto grad = torch::autograd::grad({loss.sum()}, {xi})[0].detach();
    consider(x, loss.detach());
    auto bad = ~torch::isfinite(grad.flatten(1)).all(1);
    if (bad.any().item<bool>()) {
      const auto idx = bad.nonzero()[0][0].item<int64_t>();
      throw NumericalError("pgd_attack: non-finite input gradient at batch index " + std::to_string(idx));
    }
    torch::Tensor step;
    if (cfg.norm == Norm::inf) {
      step = grad.sign();
    } else {
      step = grad / bcast(per_sample_norm(grad, Norm::l2).clamp_min(1e-12), grad);
    }
    x = project(x + cfg.step_size * step, x0, cfg.epsilon, cfg.norm);
  }
  {
    torch::NoGradGuard ng;
    auto loss = torch::nn::functional::cross_entropy(
        model.forward(x).logits, batch.labels,
        torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
    consider(x, loss);
  }
  auto out = best_x.detach().contiguous();
  if (cfg.norm == Norm::inf)
    enforce_linf(out, x0, cfg.epsilon);
  else
    enforce_l2(out, x0, cfg.epsilon);
  return {out.to(batch.pixels.scalar_type()), batch.labels.clone()};
}

ImageBatch pgd_attack_dataset(DownstreamModel& model, const ImageBatch& data, const AttackConfig& cfg,
                              int64_t batch_size, uint64_t seed) {
  auto gen = make_generator(seed);
  std::vector<ImageBatch> parts;
  for (int64_t b = 0; b < data.size(); b += batch_size)
    parts.push_back(pgd_attack(model, data.slice(b, std::min(data.size(), b + batch_size)), cfg, &gen));
  return concat(parts);
}

// ---------------------------------------------------------------------------

namespace {

torch::Tensor project_delta(const torch::Tensor& v, double eps, Norm norm) {
  if (norm == Norm::inf) {
    const double e = floor_to_dtype(eps, v.scalar_type());
    return v.clamp(-e, e);
  }
  const double n = v.norm().item<double>();
  if (n <= eps) return v;
  return v * ((eps / n) * (1.0 - 1e-6));
}

// Linearized minimal push moving `x` across the nearest decision boundary of `label`.
torch::Tensor minimal_push(DownstreamModel& model, const torch::Tensor& x, int64_t label, const UapOptions& opt,
                           Norm norm) {
  const auto k = model.num_classes();
  torch::Tensor total = torch::zeros_like(x);
  for (int64_t it = 0; it < opt.deepfool_steps; ++it) {
    auto xi = (x + (1.0 + opt.overshoot) * total).clamp(0.0, 1.0).detach().requires_grad_(true);
    auto logits = model.forward(xi).logits[0];
    if (predict_labels(logits.detach().unsqueeze(0))[0].item<int64_t>() != label) break;
    double best_ratio = std::numeric_limits<double>::infinity();
    torch::Tensor best_r;
    for (int64_t c = 0; c < k; ++c) {
      if (c == label) continue;
      auto diff = logits[c] - logits[label];
      auto w = torch::autograd::grad({diff}, {xi}, {}, /*retain_graph=*/true)[0].detach();
      const double f = std::abs(diff.item<double>());
      const double wn = norm == Norm::inf ? w.abs().sum().item<double>() : w.norm().item<double>();
      if (wn < 1e-12) continue;
      const double ratio = f / wn;
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_r = norm == Norm::inf ? (f + 1e-4) / wn * w.sign() : (f + 1e-4) / (wn * wn) * w;
      }
    }
    if (!best_r.defined()) break;
    total = total + best_r;
  }
  return (1.0 + opt.overshoot) * total;
}

}  // namespace

double fooling_rate(DownstreamModel& model, const ImageBatch& data, const torch::Tensor& delta) {
  if (data.empty()) throw InputError("fooling_rate: empty dataset");
  auto clean = predict_labels(predict_logits(model, data));
  auto pert = predict_labels(predict_logits(model, ImageBatch{(data.pixels + delta).clamp(0.0, 1.0), data.labels}));
  return 100.0 * (clean != pert).sum().item<double>() / static_cast<double>(data.size());
}

UniversalPerturbation uap_attack(DownstreamModel& model, const ImageBatch& dataset, const AttackConfig& cfg,
                                 int64_t max_passes, const UapOptions& options) {
  if (dataset.empty()) throw InputError("uap_attack: empty dataset stream");
  cfg.validate();
  if (max_passes < 0) throw ConfigError("uap_attack: max_passes must be >= 0");
  ++g_attack_calls;
  const auto& shape = model.architecture().input_shape;
  UniversalPerturbation out;
  out.epsilon = cfg.epsilon;
  out.norm = cfg.norm;
  out.seed = options.seed;
  out.delta = torch::zeros({shape[0], shape[1], shape[2]}, torch::TensorOptions().dtype(model.dtype()));
  if (max_passes == 0 || cfg.epsilon == 0.0) {
    out.fooling_rate = 0.0;
    return out;
  }

  auto construction = subset(dataset, options.max_samples, options.seed).to(model.dtype());
  auto clean = predict_labels(predict_logits(model, construction));
  EvalModeGuard guard(model);
  auto gen = make_generator(options.seed + 1);
  torch::Tensor v = out.delta.clone();
  for (int64_t pass = 0; pass < max_passes; ++pass) {
    auto order = torch::randperm(construction.size(), gen, torch::kLong);
    for (int64_t j = 0; j < construction.size(); ++j) {
      const auto i = order[j].item<int64_t>();
      const auto label = clean[i].item<int64_t>();
      auto x = (construction.pixels[i].unsqueeze(0) + v).clamp(0.0, 1.0);
      {
        torch::NoGradGuard ng;
        if (predict_labels(model.forward(x).logits)[0].item<int64_t>() != label) continue;
      }
      auto dv = minimal_push(model, x, label, options, cfg.norm);
      v = project_delta(v + dv[0], cfg.epsilon, cfg.norm).detach();
    }
  }
  out.delta = v;
  out.fooling_rate = fooling_rate(model, construction, v);
  return out;
}

ImageBatch apply_perturbation(const ImageBatch& batch, const UniversalPerturbation& delta) {
  if (!delta.delta.defined() || batch.pixels.dim() != 4 ||
      delta.delta.sizes() != batch.pixels.sizes().slice(1))
    throw InputError("apply_perturbation: perturbation shape does not match the batch");
  return {(batch.pixels + delta.delta.to(batch.pixels.scalar_type())).clamp(0.0, 1.0), batch.labels.clone()};
}

void save_perturbation(const std::filesystem::path& path, const UniversalPerturbation& p) {
  PackedFile f;
  f.arrays.push_back({"delta", p.delta.detach()});
  f.meta = {{"epsilon", p.epsilon},
            {"norm", std::string(to_string(p.norm))},
            {"seed", p.seed},
            {"fooling_rate", p.fooling_rate}};
  write_packed(path, f);
}

UniversalPerturbation load_perturbation(const std::filesystem::path& path) {
  const auto f = read_packed(path);
  UniversalPerturbation p;
  p.delta = f.get("delta");
  try {
    p.epsilon = f.meta.at("epsilon").get<double>();
    p.norm = parse_norm(f.meta.at("norm").get<std::string>());
    p.seed = f.meta.value("seed", uint64_t{0});
    p.fooling_rate = f.meta.value("fooling_rate", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": perturbation header incomplete: " + e.what());
  }
  return p;
}

}  // namespace genaf
