#include "genaf/stage1.hpp"

#include <chrono>
#include <memory>
#include <optional>

#include "genaf/error.hpp"
#include "genaf/feature_graph.hpp"

namespace genaf {

std::string_view to_string(AdvSchedule s) { return s == AdvSchedule::per_batch ? "per_batch" : "precomputed"; }

AdvSchedule parse_adv_schedule(std::string_view text) {
  if (text == "per_batch") return AdvSchedule::per_batch;
  if (text == "precomputed") return AdvSchedule::precomputed;
  throw ConfigError("unknown adv_schedule '" + std::string(text) + "'");
}

std::string_view to_string(GraphFeatures g) { return g == GraphFeatures::logits ? "logits" : "encoder"; }

GraphFeatures parse_graph_features(std::string_view text) {
  if (text == "logits") return GraphFeatures::logits;
  if (text == "encoder") return GraphFeatures::encoder;
  throw ConfigError("unknown graph_features '" + std::string(text) + "'");
}

std::string_view to_string(GrReduction r) { return r == GrReduction::sum ? "sum" : "mean"; }

GrReduction parse_gr_reduction(std::string_view text) {
  if (text == "sum") return GrReduction::sum;
  if (text == "mean") return GrReduction::mean;
  throw ConfigError("unknown gr_reduction '" + std::string(text) + "'");
}

void Stage1Config::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("stage1.lambda must be >= 0");
  if (!(lr_encoder >= 0.0) || !(lr_classifier >= 0.0) || !(lr_shared >= 0.0))
    throw ConfigError("stage1 learning rates must be >= 0");
  if (epochs < 0) throw ConfigError("stage1.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("stage1.batch_size must be >= 1");
  attack.validate();
}

GdatLoss compute_gdat_loss(DownstreamModel& model, const ImageBatch& benign, const ImageBatch& adversarial,
                           double lambda, GraphFeatures graph_features, bool stop_gradient_benign,
                           GrReduction reduction) {
  if (benign.size() != adversarial.size() || !torch::equal(benign.labels, adversarial.labels))
    throw InputError("gdat loss: benign and adversarial batches are not sample-aligned");
  auto out_c = forward(model, benign);
  auto out_a = forward(model, adversarial);
  GdatLoss loss;
  loss.dat = cross_entropy(out_a.logits, adversarial.labels);
  auto nodes_c = graph_features == GraphFeatures::logits ? out_c.logits : out_c.features;
  auto nodes_a = graph_features == GraphFeatures::logits ? out_a.logits : out_a.features;
  if (stop_gradient_benign) nodes_c = nodes_c.detach();
  GraphPair pair{build_feature_graph(nodes_c), build_feature_graph(nodes_a), true};
  loss.gr = genetic_regularization_loss(pair);
  if (reduction == GrReduction::mean) {
    const auto n = static_cast<double>(benign.size());
    loss.gr = loss.gr / (n * (n - 1.0));
  }
  loss.total = loss.dat + lambda * loss.gr;
  return loss;
}

namespace {

struct Optimizers {
  std::vector<std::unique_ptr<torch::optim::Adam>> adams;

  void zero_grad() {
    for (auto& a : adams) a->zero_grad();
  }
  void step() {
    for (auto& a : adams) a->step();
  }
};

Optimizers make_optimizers(const DownstreamModel& model, const Stage1Config& cfg) {
  Optimizers o;
  auto add = [&](std::vector<torch::Tensor> params, double lr) {
    if (lr == 0.0 || params.empty()) return;  // lr 0 leaves the group bitwise untouched
    o.adams.push_back(std::make_unique<torch::optim::Adam>(
        std::move(params),
        torch::optim::AdamOptions(lr).betas({cfg.beta1, cfg.beta2}).weight_decay(0.0)));
  };
  if (cfg.single_optimizer) {
    add(model.parameters(), cfg.lr_shared);
  } else {
    add(model.parameters(LayerRole::encoder), cfg.lr_encoder);
    add(model.parameters(LayerRole::classifier), cfg.lr_classifier);
  }
  return o;
}

enum class Objective { gdat, standard };

TrainLog run_loop(DownstreamModel& model, const ImageBatch& data, const Stage1Config& cfg, Objective objective) {
  cfg.validate();
  TrainLog log;
  log.stage = objective == Objective::gdat ? "stage1" : "standard";
  if (cfg.epochs == 0) return log;
  if (data.empty()) throw InputError(log.stage + ": empty training set");
  data.validate(model.num_classes());

  const auto data_t = data.to(model.dtype());
  auto optim = make_optimizers(model, cfg);
  auto shuffle_gen = make_generator(cfg.seed);
  auto attack_gen = make_generator(cfg.seed + 0x5bd1e995ull);

  std::optional<ImageBatch> precomputed;
  if (objective == Objective::gdat && cfg.adv_schedule == AdvSchedule::precomputed)
    precomputed = pgd_attack_dataset(model, data_t, cfg.attack, cfg.batch_size, cfg.seed + 0x5bd1e995ull);

  const double lr_e = cfg.single_optimizer ? cfg.lr_shared : cfg.lr_encoder;
  const double lr_c = cfg.single_optimizer ? cfg.lr_shared : cfg.lr_classifier;
  const auto t0 = std::chrono::steady_clock::now();
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = batch_indices(data_t.size(), cfg.batch_size, /*shuffle=*/true, &shuffle_gen);
    for (size_t b = 0; b < batches.size(); ++b) {
      const auto benign = data_t.select(batches[b]);
      StepRecord rec{epoch, step, 0.0, 0.0, 0.0, lr_e, lr_c, 0.0};
      torch::Tensor total;
      if (objective == Objective::gdat) {
        ImageBatch adv = precomputed ? precomputed->select(batches[b])
                                     : pgd_attack(model, benign, cfg.attack, &attack_gen);
        model.train();
        auto loss = compute_gdat_loss(model, benign, adv, cfg.lambda, cfg.graph_features, cfg.stop_gradient_benign,
                                      cfg.gr_reduction);
        total = loss.total;
        rec.dat = loss.dat.item<double>();
        rec.gr = loss.gr.item<double>();
      } else {
        model.train();
        total = cross_entropy(forward(model, benign).logits, benign.labels);
        rec.dat = total.item<double>();
      }
      rec.total = total.item<double>();
      if (!std::isfinite(rec.total))
        throw TrainingError(log.stage + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      optim.zero_grad();
      total.backward();
      optim.step();
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.steps.push_back(rec);
      ++step;
    }
    log.close_epoch(epoch);
  }
  model.eval();
  return log;
}

}  // namespace

TrainLog train_stage1(DownstreamModel& model, const ImageBatch& train_data, const Stage1Config& cfg) {
  return run_loop(model, train_data, cfg, Objective::gdat);
}

TrainLog train_standard(DownstreamModel& model, const ImageBatch& train_data, const Stage1Config& cfg) {
  return run_loop(model, train_data, cfg, Objective::standard);
}

}  // namespace genaf
