#include "genaf/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "genaf/error.hpp"

namespace genaf {

void RcConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("rc.gamma must be >= 0");
  if (ascent_steps < 1) throw ConfigError("rc.ascent_steps must be >= 1");
  if (eval_subset_size < 1) throw ConfigError("rc.eval_subset_size must be >= 1");
  if (batch_size < 1) throw ConfigError("rc.batch_size must be >= 1");
}

nlohmann::json RcConfig::to_json() const {
  return {{"gamma", gamma},
          {"norm_p", std::string(to_string(norm))},
          {"ascent_steps", ascent_steps},
          {"eval_subset_size", eval_subset_size},
          {"seed", seed}};
}

RcConfig RcConfig::from_json(const nlohmann::json& j) {
  RcConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.norm = parse_norm(j.at("norm_p").get<std::string>());
  c.ascent_steps = j.at("ascent_steps").get<int64_t>();
  c.eval_subset_size = j.at("eval_subset_size").get<int64_t>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

double SensitivityDictionary::at(std::string_view layer_id) const {
  for (const auto& e : entries)
    if (e.layer_id == layer_id) return e.rc;
  throw InputError("sensitivity dictionary has no layer '" + std::string(layer_id) + "'");
}

namespace {
std::vector<SensitivityEntry> ascending(const std::vector<SensitivityEntry>& entries) {
  auto sorted = entries;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.rc < b.rc; });
  return sorted;
}
}  // namespace

nlohmann::json SensitivityDictionary::to_json() const {
  nlohmann::json j{{"model_hash", model_hash}, {"config", config.to_json()}, {"entries", nlohmann::json::array()}};
  for (const auto& e : ascending(entries)) j["entries"].push_back({{"layer_id", e.layer_id}, {"rc", e.rc}});
  return j;
}

SensitivityDictionary SensitivityDictionary::from_json(const nlohmann::json& j) {
  try {
    SensitivityDictionary d;
    d.model_hash = j.at("model_hash").get<std::string>();
    d.config = RcConfig::from_json(j.at("config"));
    for (const auto& e : j.at("entries")) d.entries.push_back({e.at("layer_id").get<std::string>(), e.at("rc").get<double>()});
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed sensitivity file: ") + e.what());
  }
}

void SensitivityDictionary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

SensitivityDictionary SensitivityDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

double adversarial_loss(DownstreamModel& model, const ImageBatch& adversarial, int64_t batch_size) {
  torch::NoGradGuard ng;
  EvalModeGuard guard(model);
  double sum = 0.0;
  for (int64_t b = 0; b < adversarial.size(); b += batch_size) {
    auto part = adversarial.slice(b, std::min(adversarial.size(), b + batch_size));
    sum += cross_entropy(forward(model, part).logits, part.labels).item<double>() * static_cast<double>(part.size());
  }
  return sum / static_cast<double>(adversarial.size());
}

namespace {

double group_norm(const std::vector<torch::Tensor>& ts, Norm norm) {
  double acc = 0.0;
  for (const auto& t : ts) {
    auto d = t.detach().to(torch::kFloat64);
    if (norm == Norm::inf)
      acc = std::max(acc, d.abs().max().item<double>());
    else
      acc += d.square().sum().item<double>();
  }
  return norm == Norm::inf ? acc : std::sqrt(acc);
}

// Mean adversarial loss and its gradient with respect to `params`.
std::vector<torch::Tensor> loss_gradient(DownstreamModel& model, const std::vector<torch::Tensor>& params,
                                         const ImageBatch& adversarial, int64_t batch_size) {
  std::vector<torch::Tensor> grads;
  for (const auto& p : params) grads.push_back(torch::zeros_like(p));
  const double n = static_cast<double>(adversarial.size());
  for (int64_t b = 0; b < adversarial.size(); b += batch_size) {
    auto part = adversarial.slice(b, std::min(adversarial.size(), b + batch_size));
    auto loss = cross_entropy(forward(model, part).logits, part.labels) * (static_cast<double>(part.size()) / n);
    auto g = torch::autograd::grad({loss}, params);
    for (size_t i = 0; i < g.size(); ++i) grads[i].add_(g[i]);
  }
  return grads;
}

void project_group(std::vector<torch::Tensor>& delta, double radius, Norm norm) {
  if (norm == Norm::inf) {
    for (auto& d : delta) d.clamp_(-radius, radius);
    return;
  }
  const double n = group_norm(delta, Norm::l2);
  if (n > radius && n > 0.0)
    for (auto& d : delta) d.mul_(radius / n);
}

std::vector<torch::Tensor> projected(const std::vector<torch::Tensor>& delta, double radius, Norm norm) {
  std::vector<torch::Tensor> out;
  for (const auto& d : delta) out.push_back(d.clone());
  project_group(out, radius, norm);
  return out;
}

// Scoped application of a layer perturbation; the base values are restored bitwise.
class LayerTrial {
 public:
  LayerTrial(DownstreamModel& model, std::string_view layer_id) : model_(model), rec_(model.layer(layer_id)) {
    for (const auto& p : rec_.params) base_.push_back(p.detach().clone());
  }
  ~LayerTrial() { apply_zero(); }
  LayerTrial(const LayerTrial&) = delete;
  LayerTrial& operator=(const LayerTrial&) = delete;

  const std::vector<torch::Tensor>& base() const { return base_; }
  const std::vector<torch::Tensor>& params() const { return rec_.params; }

  void apply(const std::vector<torch::Tensor>& delta) {
    torch::NoGradGuard ng;
    for (size_t i = 0; i < base_.size(); ++i) rec_.params[i].copy_(base_[i] + delta[i]);
  }
  void apply_zero() {
    torch::NoGradGuard ng;
    for (size_t i = 0; i < base_.size(); ++i) rec_.params[i].copy_(base_[i]);
  }

 private:
  DownstreamModel& model_;
  const LayerRecord& rec_;
  std::vector<torch::Tensor> base_;
};

// Projected ascent path inside the ball of `radius`; returns the iterates (excluding zero).
std::vector<std::vector<torch::Tensor>> ascent_path(DownstreamModel& model, LayerTrial& trial,
                                                    const ImageBatch& adversarial, const RcConfig& cfg,
                                                    double radius) {
  std::vector<torch::Tensor> delta;
  for (const auto& b : trial.base()) delta.push_back(torch::zeros_like(b));
  std::vector<std::vector<torch::Tensor>> path;
  const double step = radius / static_cast<double>(cfg.ascent_steps);
  for (int64_t t = 0; t < cfg.ascent_steps; ++t) {
    trial.apply(delta);
    auto grads = loss_gradient(model, trial.params(), adversarial, cfg.batch_size);
    if (cfg.norm == Norm::inf) {
      for (size_t i = 0; i < delta.size(); ++i) delta[i].add_(grads[i].sign(), step);
    } else {
      const double gn = group_norm(grads, Norm::l2);
      if (gn == 0.0) break;  // stationary: further steps revisit the same point
      for (size_t i = 0; i < delta.size(); ++i) delta[i].add_(grads[i], step / gn);
    }
    project_group(delta, radius, cfg.norm);
    std::vector<torch::Tensor> snapshot;
    for (const auto& d : delta) snapshot.push_back(d.clone());
    path.push_back(std::move(snapshot));
  }
  return path;
}

}  // namespace

double layer_robustness_contribution(DownstreamModel& model, std::string_view layer_id, const ImageBatch& adversarial,
                                     const RcConfig& cfg, const RcObserver& observer) {
  cfg.validate();
  if (!model.has_layer(layer_id)) throw InputError("rc: layer '" + std::string(layer_id) + "' is not in the model");
  if (adversarial.empty()) throw InputError("rc: empty evaluation set");
  EvalModeGuard guard(model);
  LayerTrial trial(model, layer_id);
  const double radius = cfg.gamma * group_norm(trial.base(), cfg.norm);
  if (radius == 0.0) return 0.0;

  const double base_loss = adversarial_loss(model, adversarial, cfg.batch_size);
  double best = 0.0;  // zero perturbation
  for (const auto& delta : ascent_path(model, trial, adversarial, cfg, radius)) {
    trial.apply(delta);
    if (observer) observer(model);
    best = std::max(best, adversarial_loss(model, adversarial, cfg.batch_size) - base_loss);
  }
  trial.apply_zero();
  return best;
}

std::vector<double> layer_robustness_contribution_nested(DownstreamModel& model, std::string_view layer_id,
                                                         const ImageBatch& adversarial, const RcConfig& cfg,
                                                         const std::vector<double>& gammas) {
  cfg.validate();
  if (!model.has_layer(layer_id)) throw InputError("rc: layer '" + std::string(layer_id) + "' is not in the model");
  if (gammas.empty()) return {};
  for (double g : gammas)
    if (!(g >= 0.0)) throw ConfigError("rc: gammas must be >= 0");
  EvalModeGuard guard(model);
  LayerTrial trial(model, layer_id);
  const double norm = group_norm(trial.base(), cfg.norm);
  const double max_gamma = *std::max_element(gammas.begin(), gammas.end());
  const double base_loss = adversarial_loss(model, adversarial, cfg.batch_size);

  std::vector<std::vector<torch::Tensor>> path;
  if (max_gamma * norm > 0.0) path = ascent_path(model, trial, adversarial, cfg, max_gamma * norm);

  // Best gain over the path projected onto each ball.
  std::vector<size_t> order(gammas.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return gammas[a] < gammas[b]; });
  std::vector<double> out(gammas.size(), 0.0);
  double running = 0.0;
  for (size_t idx : order) {
    const double radius = gammas[idx] * norm;
    if (radius > 0.0) {
      for (const auto& delta : path) {
        trial.apply(projected(delta, radius, cfg.norm));
        running = std::max(running, adversarial_loss(model, adversarial, cfg.batch_size) - base_loss);
      }
    }
    out[idx] = running;
  }
  trial.apply_zero();
  return out;
}

SensitivityDictionary build_sensitivity_dictionary(DownstreamModel& model, const ImageBatch& data, const RcConfig& cfg,
                                                   const AttackConfig& attack) {
  cfg.validate();
  if (data.empty()) throw InputError("rc: empty dataset");
  SensitivityDictionary dict;
  dict.config = cfg;
  dict.model_hash = model_hash(model);
  const auto eval_set = subset(data, cfg.eval_subset_size, cfg.seed).to(model.dtype());
  const auto adversarial = pgd_attack_dataset(model, eval_set, attack, cfg.batch_size, cfg.seed);
  for (const auto& rec : model.layers())
    dict.entries.push_back({rec.layer_id, layer_robustness_contribution(model, rec.layer_id, adversarial, cfg)});
  return dict;
}

std::vector<std::string> select_topk_least_robust(const SensitivityDictionary& dict, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("top-k ratio must lie in [0, 1]");
  const auto count = static_cast<size_t>(std::floor(ratio * static_cast<double>(dict.entries.size()) + 1e-9));
  const auto sorted = ascending(dict.entries);
  std::vector<std::string> out;
  for (size_t i = 0; i < count && i < sorted.size(); ++i) out.push_back(sorted[i].layer_id);
  return out;
}

}  // namespace genaf
