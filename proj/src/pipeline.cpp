#include "genaf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "genaf/attacks.hpp"
#include "genaf/checkpoint.hpp"
#include "genaf/error.hpp"
#include "genaf/hash.hpp"
#include "genaf/metrics.hpp"
#include "genaf/pretrain.hpp"
#include "genaf/sensitivity.hpp"
#include "genaf/stage1.hpp"
#include "genaf/stage2.hpp"
#include "genaf/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace genaf {
namespace {

constexpr uint64_t kClassifierSeedOffset = 5;
constexpr uint64_t kEvalSeedOffset = 6;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Rethrows with the stage name prefixed, keeping the exit-code class.
template <class F>
auto run_stage(const std::string& stage, std::string& current, F&& f) {
  current = stage;
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + stage + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError("stage " + stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + stage + ": " + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError("stage " + stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("stage " + stage + ": " + e.what());
  } catch (const c10::Error& e) {
    throw TrainingError("stage " + stage + ": " + e.what_without_backtrace());
  }
}

bool is_timing_file(const std::string& rel) {
  return rel.rfind("logs/", 0) == 0 || rel.rfind("metrics/", 0) == 0 || rel == "summary.json";
}

json strip_timing(const json& j) {
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "wall_time" || it.key() == "wall_time_s") continue;
      out[it.key()] = strip_timing(it.value());
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(strip_timing(v));
    return out;
  }
  return j;
}

struct EvalSets {
  ImageBatch test;
  AttackConfig pgd;
  int64_t batch_size = 256;
  uint64_t seed = 0;
  std::optional<UniversalPerturbation> uap;
};

double seconds_now() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

json evaluate_model(DownstreamModel& model, const std::string& name, const EvalSets& ev, const fs::path& dir) {
  json out = json::object();
  const auto save = [&](const std::string& kind, MetricsReport r, double t0) {
    r.wall_time_s = seconds_now() - t0;
    r.save(dir / "metrics" / (name + "_" + kind + ".json"));
    out[kind] = r.to_json();
  };
  double t0 = seconds_now();
  save("clean", evaluate(model, ev.test, ev.test, "clean", ev.seed), t0);

  t0 = seconds_now();
  const auto adv = pgd_attack_dataset(model, ev.test, ev.pgd, ev.batch_size, ev.seed);
  save("pgd", evaluate(model, ev.test, adv, ev.pgd.descriptor(), ev.seed), t0);

  if (ev.uap) {
    t0 = seconds_now();
    const auto perturbed = apply_perturbation(ev.test, *ev.uap);
    std::ostringstream desc;
    desc << "uap(eps=" << ev.uap->epsilon << ",norm=" << to_string(ev.uap->norm) << ")";
    save("uap", evaluate(model, ev.test, perturbed, desc.str(), ev.seed), t0);
  }
  return out;
}

CheckpointMeta meta_for(const RunConfig& cfg, const std::string& stage, int64_t epoch) {
  CheckpointMeta m;
  m.stage = stage;
  m.epoch = epoch;
  m.seed = cfg.seed();
  m.config_hash = cfg.hash();
  return m;
}

}  // namespace

ImageBatch load_split(const RunConfig& cfg, std::string_view which) {
  const auto& source = cfg.get("data." + std::string(which));
  if (source == "synthetic") return generate_synthetic(cfg.synthetic(which));
  return load_dataset(source, cfg.integer("data.channels"), cfg.integer("data.image_size"));
}

DownstreamModel provision_encoder(const RunConfig& cfg, const fs::path& log_path) {
  const auto arch = cfg.architecture();
  const auto& ckpt = cfg.get("encoder.checkpoint");
  std::optional<DownstreamModel> model;
  if (!ckpt.empty()) {
    model.emplace(load_checkpoint(ckpt, nullptr, arch));
  } else {
    const auto data = load_split(cfg, "pretrain");
    auto result = pretrain_encoder(data, arch, cfg.pretrain());
    if (!log_path.empty()) {
      std::string text = json{{"stage", "pretrain"}, {"epoch", -1}, {"loss", result.initial_loss}}.dump() + "\n";
      for (size_t e = 0; e < result.epoch_losses.size(); ++e)
        text += json{{"stage", "pretrain"}, {"epoch", e}, {"loss", result.epoch_losses[e]}}.dump() + "\n";
      write_text(log_path, text);
    }
    model.emplace(std::move(result.model));
  }
  model->reinitialize(LayerRole::classifier, cfg.seed() + kClassifierSeedOffset);
  model->eval();
  return std::move(*model);
}

fs::path run_pipeline(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  const fs::path dir = out_dir ? *out_dir : cfg.output_root() / cfg.experiment_name();
  make_dirs(dir);
  if (fs::exists(dir / kManifestFile)) fs::remove(dir / kManifestFile);
  for (const char* sub : {"checkpoints", "logs", "metrics"}) make_dirs(dir / sub);
  write_text(dir / "config.txt", cfg.serialize());

  std::string stage = "setup";
  try {
    const auto splits = run_stage("data", stage, [&] {
      auto tr = load_split(cfg, "train");
      auto te = load_split(cfg, "test");
      tr.validate(cfg.integer("model.num_classes"));
      te.validate(cfg.integer("model.num_classes"));
      return std::pair{tr, te};
    });
    const ImageBatch& train = splits.first;
    const ImageBatch& test = splits.second;

    DownstreamModel encoder = run_stage("encoder", stage, [&] {
      const bool pretrained_here = cfg.get("encoder.checkpoint").empty();
      auto m = provision_encoder(cfg, pretrained_here ? dir / "logs" / "pretrain.jsonl" : fs::path{});
      save_checkpoint(m, dir / "encoder", meta_for(cfg, "encoder", cfg.integer("pretrain.epochs")));
      return m;
    });

    json summary = json::object();
    summary["config_hash"] = cfg.hash();
    summary["encoder_hash"] = model_hash(encoder);

    EvalSets ev;
    ev.test = test;
    ev.pgd = cfg.eval_attack();
    ev.batch_size = cfg.integer("eval.batch_size");
    ev.seed = cfg.seed() + kEvalSeedOffset;

    DownstreamModel baseline = run_stage("baseline", stage, [&] {
      auto m = encoder.clone();
      const auto bcfg = cfg.baseline();
      if (bcfg.epochs > 0) {
        auto log = train_standard(m, train, bcfg);
        log.write_jsonl(dir / "logs" / "baseline.jsonl");
      }
      save_checkpoint(m, dir / "checkpoints" / "baseline", meta_for(cfg, "baseline", bcfg.epochs));
      return m;
    });

    run_stage("uap", stage, [&] {
      if (!cfg.flag("eval.uap")) return;
      // Crafted once on the standard fine-tuned model, which stands in for the
      // publicly available encoder, then transferred to every evaluated model.
      UapOptions opts;
      opts.max_samples = cfg.integer("eval.uap_samples");
      opts.seed = ev.seed;
      ev.uap = uap_attack(baseline, train, cfg.eval_attack(), cfg.integer("eval.uap_passes"), opts);
      save_perturbation(dir / "uap.bin", *ev.uap);
    });

    summary["baseline"] = run_stage("eval-baseline", stage, [&] { return evaluate_model(baseline, "baseline", ev, dir); });

    const auto s1cfg = cfg.stage1();
    if (s1cfg.epochs > 0) {
      DownstreamModel model1 = run_stage("stage1", stage, [&] {
        auto m = encoder.clone();
        auto log = train_stage1(m, train, s1cfg);
        log.write_jsonl(dir / "logs" / "stage1.jsonl");
        save_checkpoint(m, dir / "checkpoints" / "stage1", meta_for(cfg, "stage1", s1cfg.epochs));
        return m;
      });
      summary["stage1"] = run_stage("eval-stage1", stage, [&] { return evaluate_model(model1, "stage1", ev, dir); });

      const auto selection = run_stage("rank-layers", stage, [&] {
        auto dict = build_sensitivity_dictionary(model1, train, cfg.rc(), cfg.attack());
        dict.save(dir / "sensitivity.json");
        return select_topk_least_robust(dict, cfg.stage2().topk_ratio);
      });
      summary["selection"] = selection;

      DownstreamModel model2 = run_stage("stage2", stage, [&] {
        auto m = model1.clone();
        const auto s2cfg = cfg.stage2();
        auto log = train_stage2(m, train, selection, s2cfg);
        log.write_jsonl(dir / "logs" / "stage2.jsonl");
        auto meta = meta_for(cfg, "stage2", s2cfg.epochs);
        meta.extra["selection"] = selection;
        save_checkpoint(m, dir / "checkpoints" / "stage2", meta);
        return m;
      });
      summary["stage2"] = run_stage("eval-stage2", stage, [&] { return evaluate_model(model2, "stage2", ev, dir); });
    }

    stage = "manifest";
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(dir, build_manifest(dir, cfg));
  } catch (const Error&) {
    try {
      write_manifest(dir, build_manifest(dir, cfg, "failed", stage));
    } catch (...) {
    }
    throw;
  }
  return dir;
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::epsilon: return "epsilon";
    case SweepAxis::learning_rates: return "learning_rates";
    case SweepAxis::topk_ratio: return "topk_ratio";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  for (auto a : {SweepAxis::lambda, SweepAxis::epsilon, SweepAxis::learning_rates, SweepAxis::topk_ratio})
    if (text == to_string(a)) return a;
  throw ConfigError("unknown sweep axis '" + std::string(text) +
                    "' (expected lambda, epsilon, learning_rates or topk_ratio)");
}

RunConfig apply_sweep_value(RunConfig cfg, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::lambda: cfg.set("stage1.lambda", value); break;
    case SweepAxis::epsilon: cfg.set("attack.epsilon", value); break;
    case SweepAxis::topk_ratio: cfg.set("stage2.topk_ratio", value); break;
    case SweepAxis::learning_rates: {
      const auto colon = value.find(':');
      if (colon == std::string::npos)
        throw ConfigError("learning_rates value '" + value + "' must be 'lr_e:lr_c' or 'shared:lr'");
      const auto a = value.substr(0, colon), b = value.substr(colon + 1);
      if (a == "shared") {
        cfg.set("stage1.single_optimizer", "true");
        cfg.set("stage1.lr_shared", b);
      } else {
        cfg.set("stage1.single_optimizer", "false");
        cfg.set("stage1.lr_encoder", a);
        cfg.set("stage1.lr_classifier", b);
      }
      break;
    }
  }
  return cfg;
}

fs::path run_ablation(const RunConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                      const std::optional<fs::path>& out_dir) {
  if (values.empty()) throw InputError("sweep needs at least one value");
  std::vector<RunConfig> points;
  for (const auto& v : values) {
    auto p = apply_sweep_value(cfg, axis, v);
    p.validate();
    points.push_back(std::move(p));
  }
  const fs::path dir =
      out_dir ? *out_dir : cfg.output_root() / (cfg.experiment_name() + "_sweep_" + std::string(to_string(axis)));
  make_dirs(dir);

  std::string shared_encoder = cfg.get("encoder.checkpoint");
  if (shared_encoder.empty()) {
    std::string stage;
    run_stage("encoder", stage, [&] {
      make_dirs(dir / "logs");
      auto m = provision_encoder(cfg, dir / "logs" / "pretrain.jsonl");
      save_checkpoint(m, dir / "encoder", meta_for(cfg, "encoder", cfg.integer("pretrain.epochs")));
    });
    shared_encoder = (dir / "encoder").string();
  }

  json rows = json::array();
  std::string csv = "value,ta,ra,asr,stage\n";
  for (size_t i = 0; i < points.size(); ++i) {
    auto p = points[i];
    p.set("encoder.checkpoint", shared_encoder);
    const auto point_dir = run_pipeline(p, dir / ("point_" + std::to_string(i)));
    std::string final_stage = "baseline";
    for (const char* s : {"stage2", "stage1"})
      if (fs::exists(point_dir / "metrics" / (std::string(s) + "_pgd.json"))) {
        final_stage = s;
        break;
      }
    const auto r = MetricsReport::load(point_dir / "metrics" / (final_stage + "_pgd.json"));
    rows.push_back({{"value", values[i]}, {"ta", r.ta}, {"ra", r.ra}, {"asr", r.asr}, {"stage", final_stage},
                    {"point", "point_" + std::to_string(i)}});
    std::ostringstream line;
    line.precision(17);
    line << values[i] << "," << r.ta << "," << r.ra << "," << r.asr << "," << final_stage << "\n";
    csv += line.str();
  }
  write_text(dir / "table.json", json{{"axis", to_string(axis)}, {"rows", rows}}.dump(2) + "\n");
  write_text(dir / "table.csv", csv);
  return dir;
}

json Manifest::to_json() const {
  json files_j = json::array();
  for (const auto& f : files) {
    json e{{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}, {"timing", f.timing}};
    if (f.timing) e["stable_sha256"] = f.stable_sha256;
    files_j.push_back(e);
  }
  return {{"status", status}, {"failed_stage", failed_stage}, {"config_hash", config_hash},
          {"config", config},  {"files", files_j}};
}

Manifest Manifest::from_json(const json& j) {
  try {
    Manifest m;
    m.status = j.at("status").get<std::string>();
    m.failed_stage = j.value("failed_stage", "");
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config").get<std::string>();
    for (const auto& e : j.at("files")) {
      ManifestEntry f;
      f.path = e.at("path").get<std::string>();
      f.sha256 = e.at("sha256").get<std::string>();
      f.bytes = e.at("bytes").get<uint64_t>();
      f.timing = e.value("timing", false);
      f.stable_sha256 = e.value("stable_sha256", "");
      m.files.push_back(std::move(f));
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

Manifest Manifest::load(const fs::path& experiment_dir) {
  const auto path = experiment_dir / kManifestFile;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError("corrupt " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string stable_file_hash(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext != ".json" && ext != ".jsonl") return sha256_file(path);
  const auto text = read_text(path);
  try {
    if (ext == ".json") return sha256_hex(strip_timing(json::parse(text)).dump());
    std::string canon;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      canon += strip_timing(json::parse(line)).dump() + "\n";
    }
    return sha256_hex(canon);
  } catch (const json::exception&) {
    return sha256_hex(text);
  }
}

Manifest build_manifest(const fs::path& dir, const RunConfig& cfg, std::string status, std::string failed_stage) {
  Manifest m;
  m.status = std::move(status);
  m.failed_stage = std::move(failed_stage);
  m.config_hash = cfg.hash();
  m.config = cfg.serialize();
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (!it->is_regular_file()) continue;
    const auto rel = fs::relative(it->path(), dir).generic_string();
    if (rel == kManifestFile) continue;
    ManifestEntry e;
    e.path = rel;
    e.sha256 = sha256_file(it->path());
    e.bytes = fs::file_size(it->path());
    e.timing = is_timing_file(rel);
    if (e.timing) e.stable_sha256 = stable_file_hash(it->path());
    m.files.push_back(std::move(e));
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(m.files.begin(), m.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

void write_manifest(const fs::path& dir, const Manifest& m) { write_text(dir / kManifestFile, m.to_json().dump(2) + "\n"); }

std::vector<std::string> verify_manifest(const fs::path& dir) {
  const auto m = Manifest::load(dir);
  std::vector<std::string> problems;
  std::set<std::string> listed;
  for (const auto& f : m.files) {
    listed.insert(f.path);
    const auto p = dir / f.path;
    if (!fs::exists(p)) {
      problems.push_back("missing: " + f.path);
      continue;
    }
    if (fs::file_size(p) != f.bytes || sha256_file(p) != f.sha256) problems.push_back("changed: " + f.path);
  }
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    const auto rel = fs::relative(it->path(), dir).generic_string();
    if (rel != kManifestFile && !listed.count(rel)) problems.push_back("unlisted: " + rel);
  }
  if (sha256_hex(m.config) != m.config_hash) problems.push_back("config hash mismatch");
  return problems;
}

}  // namespace genaf
