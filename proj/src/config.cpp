#include "genaf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "genaf/error.hpp"
#include "genaf/hash.hpp"

namespace genaf {
namespace {

enum class Type { text, integer, real, rational_or_auto, boolean, int_list, choice };

struct KeySpec {
  const char* key;
  Type type;
  const char* value;
  std::vector<std::string_view> choices = {};
};

// Full-scale defaults.
const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"experiment_name", Type::text, "genaf"},
      {"output_root", Type::text, "runs"},
      {"seed", Type::integer, "0"},

      {"data.pretrain", Type::text, "synthetic"},
      {"data.train", Type::text, "synthetic"},
      {"data.test", Type::text, "synthetic"},
      {"data.channels", Type::integer, "3"},
      {"data.image_size", Type::integer, "32"},
      {"data.synthetic.style", Type::choice, "shapes", {"shapes", "blobs"}},
      {"data.synthetic.pretrain_samples", Type::integer, "5000"},
      {"data.synthetic.pretrain_classes", Type::integer, "4"},
      {"data.synthetic.train_samples", Type::integer, "2000"},
      {"data.synthetic.test_samples", Type::integer, "1000"},
      {"data.synthetic.noise", Type::real, "0.04"},
      {"data.synthetic.min_contrast", Type::real, "0.5"},

      {"model.channels", Type::int_list, "16,32,64,64"},
      {"model.feature_dim", Type::integer, "128"},
      {"model.classifier_hidden", Type::int_list, ""},
      {"model.num_classes", Type::integer, "2"},

      {"encoder.checkpoint", Type::text, ""},
      {"pretrain.epochs", Type::integer, "20"},
      {"pretrain.batch_size", Type::integer, "256"},
      {"pretrain.temperature", Type::real, "0.5"},
      {"pretrain.lr", Type::real, "0.001"},
      {"pretrain.projection_dim", Type::integer, "64"},
      {"pretrain.crop_scale_min", Type::real, "0.5"},
      {"pretrain.brightness", Type::real, "0.6"},
      {"pretrain.contrast", Type::real, "0.6"},
      {"pretrain.saturation", Type::real, "0.8"},
      {"pretrain.hue", Type::real, "0.5"},
      {"pretrain.grayscale", Type::real, "0.3"},

      {"baseline.epochs", Type::integer, "50"},

      {"attack.epsilon", Type::real, "10/255"},
      {"attack.norm", Type::choice, "inf", {"inf", "2"}},
      {"attack.steps", Type::integer, "10"},
      {"attack.step_size", Type::rational_or_auto, "auto"},
      {"attack.random_start", Type::boolean, "true"},

      {"stage1.lambda", Type::real, "20"},
      {"stage1.lr_encoder", Type::real, "0.0001"},
      {"stage1.lr_classifier", Type::real, "0.005"},
      {"stage1.epochs", Type::integer, "50"},
      {"stage1.batch_size", Type::integer, "256"},
      {"stage1.adv_schedule", Type::choice, "per_batch", {"per_batch", "precomputed"}},
      {"stage1.graph_features", Type::choice, "logits", {"logits", "encoder"}},
      {"stage1.stop_gradient_benign", Type::boolean, "false"},
      {"stage1.gr_reduction", Type::choice, "mean", {"sum", "mean"}},
      {"stage1.single_optimizer", Type::boolean, "false"},
      {"stage1.lr_shared", Type::real, "0.01"},

      {"rc.gamma", Type::real, "0.01"},
      {"rc.norm", Type::choice, "2", {"inf", "2"}},
      {"rc.ascent_steps", Type::integer, "5"},
      {"rc.eval_subset_size", Type::integer, "1024"},

      {"stage2.topk_ratio", Type::real, "0.2"},
      {"stage2.lr", Type::real, "0.001"},
      {"stage2.epochs", Type::integer, "20"},
      {"stage2.batch_size", Type::integer, "256"},

      {"eval.epsilon", Type::real, "10/255"},
      {"eval.norm", Type::choice, "inf", {"inf", "2"}},
      {"eval.steps", Type::integer, "10"},
      {"eval.step_size", Type::rational_or_auto, "auto"},
      {"eval.random_start", Type::boolean, "false"},
      {"eval.uap", Type::boolean, "true"},
      {"eval.uap_passes", Type::integer, "1"},
      {"eval.uap_samples", Type::integer, "256"},
      {"eval.batch_size", Type::integer, "256"},
  };
  return table;
}

const KeySpec& spec_for(const std::string& key) {
  for (const auto& s : key_table())
    if (key == s.key) return s;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int64_t parse_int(std::string_view text, const std::string& key) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view text, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + std::string(text) + "'");
}

std::vector<int64_t> parse_int_list(std::string_view text, const std::string& key) {
  std::vector<int64_t> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (t.empty()) continue;
    out.push_back(parse_int(t, key));
  }
  return out;
}

void check_value(const KeySpec& spec, const std::string& value) {
  const std::string key = spec.key;
  switch (spec.type) {
    case Type::text: break;
    case Type::integer: parse_int(value, key); break;
    case Type::real:
      try {
        parse_rational(value);
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
      break;
    case Type::rational_or_auto:
      if (value != "auto") {
        try {
          parse_rational(value);
        } catch (const ConfigError& e) {
          throw ConfigError("config key '" + key + "': " + e.what());
        }
      }
      break;
    case Type::boolean: parse_bool(value, key); break;
    case Type::int_list: parse_int_list(value, key); break;
    case Type::choice:
      if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end())
        throw ConfigError("config key '" + key + "': invalid value '" + value + "'");
      break;
  }
}

AttackConfig attack_from(const RunConfig& c, const std::string& prefix) {
  AttackConfig a;
  a.epsilon = c.real(prefix + ".epsilon");
  a.norm = parse_norm(c.get(prefix + ".norm"));
  a.steps = c.integer(prefix + ".steps");
  const auto& step = c.get(prefix + ".step_size");
  a.step_size = step == "auto" ? (a.epsilon > 0 ? a.epsilon / 4.0 : 1e-3) : parse_rational(step);
  a.random_start = c.flag(prefix + ".random_start");
  return a;
}

}  // namespace

double parse_rational(std::string_view text) {
  const auto t = trim(text);
  if (t.empty()) throw ConfigError("empty numeric value");
  const auto slash = t.find('/');
  if (slash != std::string::npos) {
    int64_t num = 0, den = 0;
    const auto a = trim(std::string_view(t).substr(0, slash));
    const auto b = trim(std::string_view(t).substr(slash + 1));
    auto r1 = std::from_chars(a.data(), a.data() + a.size(), num);
    auto r2 = std::from_chars(b.data(), b.data() + b.size(), den);
    if (r1.ec != std::errc() || r1.ptr != a.data() + a.size() || r2.ec != std::errc() ||
        r2.ptr != b.data() + b.size())
      throw ConfigError("malformed rational '" + t + "'");
    if (den == 0) throw ConfigError("rational with zero denominator '" + t + "'");
    const int64_t g = std::gcd(num, den);
    num /= g;
    den /= g;
    return static_cast<double>(num) / static_cast<double>(den);
  }
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError("malformed number '" + t + "'");
  return v;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& s : key_table()) c.values_[s.key] = s.value;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c = defaults();
  c.set("experiment_name", "desk");
  c.set("pretrain.batch_size", "128");
  c.set("baseline.epochs", "20");
  c.set("stage1.batch_size", "128");
  c.set("stage1.epochs", "20");
  c.set("stage2.batch_size", "128");
  c.set("stage2.epochs", "20");
  c.set("eval.batch_size", "128");
  return c;
}

RunConfig RunConfig::preset(std::string_view name) {
  if (name == "default") return defaults();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or desk)");
}

RunConfig RunConfig::parse(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    base.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return base;
}

RunConfig RunConfig::load(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::move(base));
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(serialize()); }

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& spec = spec_for(key);
  const auto v = trim(value);
  check_value(spec, v);
  values_[key] = v;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::contains(const std::string& key) const { return values_.count(key) > 0; }

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys;
  for (const auto& s : key_table()) keys.emplace_back(s.key);
  return keys;
}

double RunConfig::real(const std::string& key) const { return parse_rational(get(key)); }
int64_t RunConfig::integer(const std::string& key) const { return parse_int(get(key), key); }
bool RunConfig::flag(const std::string& key) const { return parse_bool(get(key), key); }
std::vector<int64_t> RunConfig::int_list(const std::string& key) const { return parse_int_list(get(key), key); }

uint64_t RunConfig::seed() const {
  const auto s = integer("seed");
  if (s < 0) throw ConfigError("seed must be >= 0");
  return static_cast<uint64_t>(s);
}

Architecture RunConfig::architecture() const {
  const auto channels = int_list("model.channels");
  if (channels.empty()) throw ConfigError("model.channels must list at least one conv block");
  for (auto ch : channels)
    if (ch < 1) throw ConfigError("model.channels entries must be positive");
  const auto c = integer("data.channels");
  const auto s = integer("data.image_size");
  return Architecture::conv_encoder({c, s, s}, channels, integer("model.feature_dim"), integer("model.num_classes"),
                                    int_list("model.classifier_hidden"));
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.dataset_path = get("data.pretrain");
  p.epochs = integer("pretrain.epochs");
  p.batch_size = integer("pretrain.batch_size");
  p.temperature = real("pretrain.temperature");
  p.lr = real("pretrain.lr");
  p.projection_dim = integer("pretrain.projection_dim");
  p.augment.crop_scale_min = real("pretrain.crop_scale_min");
  p.augment.brightness = real("pretrain.brightness");
  p.augment.contrast = real("pretrain.contrast");
  p.augment.saturation = real("pretrain.saturation");
  p.augment.hue = real("pretrain.hue");
  p.augment.grayscale = real("pretrain.grayscale");
  p.init_seed = seed();
  p.augmentation_seed = seed() + 1;
  p.validate();
  return p;
}

AttackConfig RunConfig::attack() const {
  auto a = attack_from(*this, "attack");
  a.validate();
  return a;
}

AttackConfig RunConfig::eval_attack() const {
  auto a = attack_from(*this, "eval");
  a.validate();
  return a;
}

Stage1Config RunConfig::stage1() const {
  Stage1Config s;
  s.lambda = real("stage1.lambda");
  s.lr_encoder = real("stage1.lr_encoder");
  s.lr_classifier = real("stage1.lr_classifier");
  s.epochs = integer("stage1.epochs");
  s.batch_size = integer("stage1.batch_size");
  s.attack = attack();
  s.adv_schedule = parse_adv_schedule(get("stage1.adv_schedule"));
  s.graph_features = parse_graph_features(get("stage1.graph_features"));
  s.stop_gradient_benign = flag("stage1.stop_gradient_benign");
  s.gr_reduction = parse_gr_reduction(get("stage1.gr_reduction"));
  s.single_optimizer = flag("stage1.single_optimizer");
  s.lr_shared = real("stage1.lr_shared");
  s.seed = seed() + 2;
  s.validate();
  return s;
}

Stage1Config RunConfig::baseline() const {
  auto s = stage1();
  s.epochs = integer("baseline.epochs");
  s.single_optimizer = false;
  if (s.epochs < 0) throw ConfigError("baseline.epochs must be >= 0");
  return s;
}

RcConfig RunConfig::rc() const {
  RcConfig r;
  r.gamma = real("rc.gamma");
  r.norm = parse_norm(get("rc.norm"));
  r.ascent_steps = integer("rc.ascent_steps");
  r.eval_subset_size = integer("rc.eval_subset_size");
  r.batch_size = integer("eval.batch_size");
  r.seed = seed() + 3;
  r.validate();
  return r;
}

Stage2Config RunConfig::stage2() const {
  Stage2Config s;
  s.topk_ratio = real("stage2.topk_ratio");
  s.lr = real("stage2.lr");
  s.epochs = integer("stage2.epochs");
  s.batch_size = integer("stage2.batch_size");
  s.seed = seed() + 4;
  s.validate();
  return s;
}

SyntheticConfig RunConfig::synthetic(std::string_view which) const {
  SyntheticConfig s;
  s.style = parse_synthetic_style(get("data.synthetic.style"));
  s.image_size = integer("data.image_size");
  s.channels = integer("data.channels");
  s.noise = real("data.synthetic.noise");
  s.min_contrast = real("data.synthetic.min_contrast");
  if (which == "pretrain") {
    s.num_samples = integer("data.synthetic.pretrain_samples");
    s.num_classes = integer("data.synthetic.pretrain_classes");
    s.seed = seed() * 1000 + 101;
  } else if (which == "train") {
    s.num_samples = integer("data.synthetic.train_samples");
    s.num_classes = integer("model.num_classes");
    s.seed = seed() * 1000 + 202;
  } else if (which == "test") {
    s.num_samples = integer("data.synthetic.test_samples");
    s.num_classes = integer("model.num_classes");
    s.seed = seed() * 1000 + 303;
  } else {
    throw ConfigError("synthetic: unknown split '" + std::string(which) + "'");
  }
  return s;
}

void RunConfig::validate() const {
  seed();
  architecture();
  pretrain();
  eval_attack();
  stage1();
  baseline();
  rc();
  stage2();
  if (integer("eval.uap_passes") < 1) throw ConfigError("eval.uap_passes must be >= 1");
  if (integer("eval.uap_samples") < 1) throw ConfigError("eval.uap_samples must be >= 1");
  if (integer("eval.batch_size") < 1) throw ConfigError("eval.batch_size must be >= 1");
  if (get("experiment_name").empty()) throw ConfigError("experiment_name must not be empty");
}

}  // namespace genaf
