#include "genaf/metrics.hpp"

#include <chrono>
#include <fstream>

#include "genaf/error.hpp"

namespace genaf {

nlohmann::json MetricsReport::to_json() const {
  return {{"ta", ta},         {"ra", ra},       {"asr", asr},
          {"n_clean", n_clean}, {"n_adv", n_adv}, {"attack_descriptor", attack_descriptor},
          {"model_hash", model_hash}, {"seed", seed}, {"wall_time_s", wall_time_s}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.ta = j.at("ta").get<double>();
    r.ra = j.at("ra").get<double>();
    r.asr = j.at("asr").get<double>();
    r.n_clean = j.at("n_clean").get<int64_t>();
    r.n_adv = j.at("n_adv").get<int64_t>();
    r.attack_descriptor = j.at("attack_descriptor").get<std::string>();
    r.model_hash = j.at("model_hash").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.wall_time_s = j.value("wall_time_s", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed metrics report: ") + e.what());
  }
}

void MetricsReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

MetricsReport MetricsReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

double accuracy_percent(const torch::Tensor& predictions, const torch::Tensor& labels) {
  if (predictions.numel() == 0) throw InputError("accuracy: empty dataset");
  if (predictions.sizes() != labels.sizes()) throw InputError("accuracy: predictions and labels differ in length");
  return 100.0 * (predictions == labels).sum().item<double>() / static_cast<double>(predictions.numel());
}

double flip_percent(const torch::Tensor& clean_predictions, const torch::Tensor& adversarial_predictions) {
  if (clean_predictions.numel() == 0) throw InputError("asr: empty dataset");
  if (clean_predictions.sizes() != adversarial_predictions.sizes())
    throw InputError("asr: clean and adversarial sets are not paired");
  return 100.0 * (clean_predictions != adversarial_predictions).sum().item<double>() /
         static_cast<double>(clean_predictions.numel());
}

double compute_ta(DownstreamModel& model, const ImageBatch& clean_test) {
  if (clean_test.empty()) throw InputError("compute_ta: empty dataset");
  return accuracy_percent(predict_labels(predict_logits(model, clean_test)), clean_test.labels);
}

double compute_ra(DownstreamModel& model, const ImageBatch& adversarial_test) {
  if (adversarial_test.empty()) throw InputError("compute_ra: empty dataset");
  return accuracy_percent(predict_labels(predict_logits(model, adversarial_test)), adversarial_test.labels);
}

double compute_asr(DownstreamModel& model, const ImageBatch& clean_test, const ImageBatch& adversarial_test) {
  if (clean_test.empty() || adversarial_test.empty()) throw InputError("compute_asr: empty dataset");
  if (clean_test.size() != adversarial_test.size()) throw InputError("compute_asr: unpaired datasets");
  return flip_percent(predict_labels(predict_logits(model, clean_test)),
                      predict_labels(predict_logits(model, adversarial_test)));
}

MetricsReport evaluate(DownstreamModel& model, const ImageBatch& clean_test, const ImageBatch& adversarial_test,
                       std::string attack_descriptor, uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  if (clean_test.empty() || adversarial_test.empty()) throw InputError("evaluate: empty dataset");
  if (clean_test.size() != adversarial_test.size()) throw InputError("evaluate: unpaired datasets");
  auto pc = predict_labels(predict_logits(model, clean_test));
  auto pa = predict_labels(predict_logits(model, adversarial_test));
  MetricsReport r;
  r.ta = accuracy_percent(pc, clean_test.labels);
  r.ra = accuracy_percent(pa, adversarial_test.labels);
  r.asr = flip_percent(pc, pa);
  r.n_clean = clean_test.size();
  r.n_adv = adversarial_test.size();
  r.attack_descriptor = std::move(attack_descriptor);
  r.model_hash = model_hash(model);
  r.seed = seed;
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace genaf
