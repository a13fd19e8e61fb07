#include "genaf/stage2.hpp"

#include <algorithm>
#include <chrono>

#include "genaf/error.hpp"

namespace genaf {

void Stage2Config::validate() const {
  if (!(topk_ratio >= 0.0 && topk_ratio <= 1.0)) throw ConfigError("stage2.topk_ratio must lie in [0, 1]");
  if (!(lr >= 0.0)) throw ConfigError("stage2.lr must be >= 0");
  if (epochs < 0) throw ConfigError("stage2.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("stage2.batch_size must be >= 1");
}

TrainLog train_stage2(DownstreamModel& model, const ImageBatch& train_data, const std::vector<std::string>& selection,
                      const Stage2Config& cfg) {
  cfg.validate();
  for (const auto& id : selection)
    if (!model.has_layer(id)) throw InputError("stage2: selection names unknown layer '" + id + "'");
  TrainLog log;
  log.stage = "stage2";
  if (selection.empty() || cfg.epochs == 0 || cfg.lr == 0.0) return log;
  if (train_data.empty()) throw InputError("stage2: empty training set");
  train_data.validate(model.num_classes());

  auto selected = [&](const std::string& id) {
    return std::find(selection.begin(), selection.end(), id) != selection.end();
  };
  std::vector<torch::Tensor> trainable;
  for (const auto& rec : model.layers()) {
    const bool on = selected(rec.layer_id);
    for (auto p : rec.params) {
      p.set_requires_grad(on);
      if (on) trainable.push_back(p);
    }
  }
  torch::optim::Adam adam(trainable,
                          torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(0.0));

  model.train();
  for (const auto& rec : model.layers())
    if (rec.is_norm && !selected(rec.layer_id)) model.set_layer_training(rec.layer_id, false);

  const auto data = train_data.to(model.dtype());
  auto gen = make_generator(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  int64_t step = 0;
  try {
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto batches = batch_indices(data.size(), cfg.batch_size, true, &gen);
      for (size_t b = 0; b < batches.size(); ++b) {
        const auto batch = data.select(batches[b]);
        auto loss = cross_entropy(forward(model, batch).logits, batch.labels);
        const double value = loss.item<double>();
        if (!std::isfinite(value))
          throw TrainingError("stage2: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b));
        adam.zero_grad();
        loss.backward();
        adam.step();
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.steps.push_back({epoch, step++, value, 0.0, value, cfg.lr, cfg.lr, wall});
      }
      log.close_epoch(epoch);
    }
  } catch (...) {
    model.set_requires_grad(true);
    model.eval();
    throw;
  }
  model.set_requires_grad(true);
  model.eval();
  return log;
}

}  // namespace genaf
