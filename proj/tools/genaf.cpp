#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "genaf/attacks.hpp"
#include "genaf/checkpoint.hpp"
#include "genaf/config.hpp"
#include "genaf/error.hpp"
#include "genaf/feature_graph.hpp"
#include "genaf/metrics.hpp"
#include "genaf/packed_array.hpp"
#include "genaf/pipeline.hpp"
#include "genaf/plot.hpp"
#include "genaf/pretrain.hpp"
#include "genaf/sensitivity.hpp"
#include "genaf/stage1.hpp"
#include "genaf/stage2.hpp"
#include "genaf/synthetic.hpp"

namespace fs = std::filesystem;
using namespace genaf;

namespace {

struct ConfigOptions {
  std::string config_file;
  std::string preset = "desk";
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "Config file (key = value lines)");
    app->add_option("--preset", preset, "Base preset: desk or default")->capture_default_str();
    app->add_option("--set", overrides, "Override, key=value (repeatable)");
  }

  RunConfig build() const {
    auto cfg = RunConfig::preset(preset);
    if (!config_file.empty()) cfg = RunConfig::load(config_file, cfg);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (const char* s = std::getenv("GENAF_SEED")) cfg.set("seed", s);
    cfg.validate();
    return cfg;
  }
};

ImageBatch data_for(const RunConfig& cfg, const std::string& data, std::string_view split) {
  if (data.empty() || data == "synthetic") {
    auto c = cfg;
    c.set("data." + std::string(split), "synthetic");
    return load_split(c, split);
  }
  return load_dataset(data, cfg.integer("data.channels"), cfg.integer("data.image_size"));
}

CheckpointMeta meta_for(const RunConfig& cfg, const std::string& stage, int64_t epoch) {
  CheckpointMeta m;
  m.stage = stage;
  m.epoch = epoch;
  m.seed = cfg.seed();
  m.config_hash = cfg.hash();
  return m;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gen-AF robust fine-tuning toolkit"};
  app.require_subcommand(1);

  ConfigOptions opts;
  std::string data, out, encoder, checkpoint, sensitivity, attack = "pgd", method = "pgd", eps, dir, axis, values,
                                                                 split = "train", dump_graph, log_path;
  std::optional<double> gamma, ratio;
  std::function<void()> action;

  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pre-training of the encoder");
  opts.add_to(pretrain);
  pretrain->add_option("--data", data, "Unlabeled pre-training data (path or 'synthetic')");
  pretrain->add_option("--out", out, "Checkpoint directory")->required();
  pretrain->callback([&] {
    action = [&] {
      const auto cfg = opts.build();
      const auto images = data_for(cfg, data, "pretrain");
      auto result = pretrain_encoder(images, cfg.architecture(), cfg.pretrain());
      auto meta = meta_for(cfg, "encoder", cfg.integer("pretrain.epochs"));
      meta.extra["initial_loss"] = result.initial_loss;
      meta.extra["epoch_losses"] = result.epoch_losses;
      save_checkpoint(result.model, out, meta);
      std::cout << "encoder written to " << out << "\n";
    };
  });

  auto* stage1 = app.add_subcommand("stage1", "Genetic-driven dual-track adversarial fine-tuning");
  opts.add_to(stage1);
  stage1->add_option("--encoder", encoder, "Encoder checkpoint")->required();
  stage1->add_option("--data", data, "Downstream training data (path or 'synthetic')");
  stage1->add_option("--out", out, "Checkpoint directory")->required();
  stage1->add_option("--log", log_path, "TrainLog output (default <out>/train_log.jsonl)");
  stage1->callback([&] {
    action = [&] {
      auto cfg = opts.build();
      cfg.set("encoder.checkpoint", encoder);
      auto model = provision_encoder(cfg);
      const auto train = data_for(cfg, data, "train");
      const auto s1 = cfg.stage1();
      auto log = train_stage1(model, train, s1);
      save_checkpoint(model, out, meta_for(cfg, "stage1", s1.epochs));
      log.write_jsonl(log_path.empty() ? fs::path(out) / "train_log.jsonl" : fs::path(log_path));
      std::cout << "stage1 checkpoint written to " << out << "\n";
    };
  });

  auto* rank = app.add_subcommand("rank-layers", "Score layer robustness contributions");
  opts.add_to(rank);
  rank->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();
  rank->add_option("--data", data, "Data for the evaluation subset (path or 'synthetic')");
  rank->add_option("--gamma", gamma, "Relative perturbation radius");
  rank->add_option("--out", out, "sensitivity.json path")->required();
  rank->callback([&] {
    action = [&] {
      auto cfg = opts.build();
      if (gamma) cfg.set("rc.gamma", std::to_string(*gamma));
      auto model = load_checkpoint(checkpoint);
      const auto train = data_for(cfg, data, "train");
      const auto dict = build_sensitivity_dictionary(model, train, cfg.rc(), cfg.attack());
      dict.save(out);
      for (const auto& e : dict.to_json().at("entries"))
        std::cout << e.at("layer_id").get<std::string>() << "\t" << e.at("rc").get<double>() << "\n";
    };
  });

  auto* stage2 = app.add_subcommand("stage2", "Fine-tune the least robust layers on benign data");
  opts.add_to(stage2);
  stage2->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();
  stage2->add_option("--sensitivity", sensitivity, "sensitivity.json")->required();
  stage2->add_option("--ratio", ratio, "Fraction of layers to fine-tune");
  stage2->add_option("--data", data, "Downstream training data (path or 'synthetic')");
  stage2->add_option("--out", out, "Checkpoint directory")->required();
  stage2->add_option("--log", log_path, "TrainLog output (default <out>/train_log.jsonl)");
  stage2->callback([&] {
    action = [&] {
      auto cfg = opts.build();
      if (ratio) cfg.set("stage2.topk_ratio", std::to_string(*ratio));
      CheckpointMeta in_meta;
      auto model = load_checkpoint(checkpoint, &in_meta);
      const auto dict = SensitivityDictionary::load(sensitivity);
      if (!dict.model_hash.empty() && dict.model_hash != model_hash(model))
        throw ConfigError("sensitivity file " + sensitivity + " was computed for a different model");
      const auto s2 = cfg.stage2();
      const auto selection = select_topk_least_robust(dict, s2.topk_ratio);
      const auto train = data_for(cfg, data, "train");
      auto log = train_stage2(model, train, selection, s2);
      auto meta = meta_for(cfg, "stage2", s2.epochs);
      meta.extra["selection"] = selection;
      save_checkpoint(model, out, meta);
      log.write_jsonl(log_path.empty() ? fs::path(out) / "train_log.jsonl" : fs::path(log_path));
      std::cout << "fine-tuned layers:";
      for (const auto& id : selection) std::cout << " " << id;
      std::cout << "\n";
    };
  });

  auto* eval = app.add_subcommand("eval", "Report TA, RA and ASR");
  opts.add_to(eval);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", data, "Test data (path or 'synthetic')");
  eval->add_option("--attack", attack, "pgd, uap, clean or file:<perturbation>")->capture_default_str();
  eval->add_option("--out", out, "report.json path")->required();
  eval->add_option("--dump-graph", dump_graph, "Write the benign/adversarial feature graphs of the first batch");
  eval->callback([&] {
    action = [&] {
      const auto cfg = opts.build();
      auto model = load_checkpoint(checkpoint);
      const auto test = data_for(cfg, data, "test");
      const uint64_t seed = cfg.seed();
      ImageBatch adv;
      std::string desc;
      if (attack == "pgd") {
        const auto a = cfg.eval_attack();
        adv = pgd_attack_dataset(model, test, a, cfg.integer("eval.batch_size"), seed);
        desc = a.descriptor();
      } else if (attack == "clean") {
        adv = test;
        desc = "clean";
      } else {
        UniversalPerturbation p;
        if (attack == "uap") {
          UapOptions u;
          u.max_samples = cfg.integer("eval.uap_samples");
          u.seed = seed;
          p = uap_attack(model, test, cfg.eval_attack(), cfg.integer("eval.uap_passes"), u);
        } else if (attack.rfind("file:", 0) == 0) {
          p = load_perturbation(attack.substr(5));
        } else {
          throw ConfigError("unknown --attack '" + attack + "' (expected pgd, uap, clean or file:<path>)");
        }
        adv = apply_perturbation(test, p);
        desc = "uap(eps=" + std::to_string(p.epsilon) + ",norm=" + std::string(to_string(p.norm)) + ")";
      }
      auto report = evaluate(model, test, adv, desc, seed);
      report.save(out);
      if (!dump_graph.empty()) {
        const int64_t n = std::min<int64_t>(test.size(), 64);
        torch::NoGradGuard ng;
        EvalModeGuard guard(model);
        const auto benign = forward(model, test.slice(0, n)).logits;
        const auto adversarial = forward(model, adv.slice(0, n)).logits;
        dump_feature_graph(fs::path(dump_graph + ".benign.bin"), build_feature_graph(benign));
        dump_feature_graph(fs::path(dump_graph + ".adversarial.bin"), build_feature_graph(adversarial));
      }
      std::cout << report.to_json().dump(2) << "\n";
    };
  });

  auto* atk = app.add_subcommand("attack", "Craft a PGD or universal perturbation");
  opts.add_to(atk);
  atk->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  atk->add_option("--data", data, "Images to attack (path or 'synthetic')");
  atk->add_option("--eps", eps, "Budget, e.g. 10/255 (default eval.epsilon)");
  atk->add_option("--method", method, "pgd or uap")->capture_default_str();
  atk->add_option("--out", out, "Packed perturbation file")->required();
  atk->callback([&] {
    action = [&] {
      auto cfg = opts.build();
      if (!eps.empty()) cfg.set("eval.epsilon", eps);
      auto model = load_checkpoint(checkpoint);
      const auto images = data_for(cfg, data, "test");
      const auto a = cfg.eval_attack();
      if (method == "uap") {
        UapOptions u;
        u.max_samples = cfg.integer("eval.uap_samples");
        u.seed = cfg.seed();
        const auto p = uap_attack(model, images, a, cfg.integer("eval.uap_passes"), u);
        save_perturbation(out, p);
        std::cout << "fooling rate " << p.fooling_rate << "%\n";
      } else if (method == "pgd") {
        const auto adv = pgd_attack_dataset(model, images, a, cfg.integer("eval.batch_size"), cfg.seed());
        PackedFile f;
        f.arrays.push_back({"delta", (adv.pixels - images.pixels).contiguous()});
        f.arrays.push_back({"labels", images.labels.contiguous()});
        f.meta = {{"method", "pgd"},
                  {"epsilon", a.epsilon},
                  {"norm", std::string(to_string(a.norm))},
                  {"seed", cfg.seed()},
                  {"descriptor", a.descriptor()}};
        write_packed(out, f);
        std::cout << "perturbations written to " << out << "\n";
      } else {
        throw ConfigError("unknown --method '" + method + "' (expected pgd or uap)");
      }
    };
  });

  auto* pipeline = app.add_subcommand("pipeline", "Run baseline, stage 1, rank-layers, stage 2 and evaluation");
  opts.add_to(pipeline);
  pipeline->add_option("--out", out, "Experiment directory (default output_root/experiment_name)");
  pipeline->callback([&] {
    action = [&] {
      const auto cfg = opts.build();
      const auto d = run_pipeline(cfg, out.empty() ? std::nullopt : std::optional<fs::path>(out));
      std::cout << "experiment written to " << d.string() << "\n";
    };
  });

  auto* sweep = app.add_subcommand("sweep", "Ablation grid over one axis");
  opts.add_to(sweep);
  sweep->add_option("--axis", axis, "lambda, epsilon, learning_rates or topk_ratio")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out, "Sweep directory");
  sweep->callback([&] {
    action = [&] {
      const auto cfg = opts.build();
      const auto d = run_ablation(cfg, parse_sweep_axis(axis), split_list(values),
                                  out.empty() ? std::nullopt : std::optional<fs::path>(out));
      std::ifstream t(d / "table.csv");
      std::cout << t.rdbuf();
    };
  });

  auto* plot = app.add_subcommand("plot", "Render TA/RA/ASR charts for an experiment or sweep directory");
  plot->add_option("--dir", dir, "Experiment or sweep directory")->required();
  plot->callback([&] {
    action = [&] {
      for (const auto& p : emit_plots(dir)) std::cout << p.string() << "\n";
    };
  });

  auto* synth = app.add_subcommand("synth", "Write a synthetic split as a packed dataset");
  opts.add_to(synth);
  synth->add_option("--split", split, "pretrain, train or test")->capture_default_str();
  synth->add_option("--out", out, "Packed dataset path")->required();
  synth->callback([&] {
    action = [&] {
      const auto cfg = opts.build();
      const auto d = generate_synthetic(cfg.synthetic(split));
      save_packed_dataset(d, out, /*quantize_u8=*/false);
      std::cout << d.size() << " images written to " << out << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    at::set_num_threads(1);
    action();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
