#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "genaf/attacks.hpp"
#include "genaf/model.hpp"
#include "genaf/pretrain.hpp"
#include "genaf/sensitivity.hpp"
#include "genaf/stage1.hpp"
#include "genaf/stage2.hpp"
#include "genaf/synthetic.hpp"

namespace genaf {

/// Parses "a/b" as an exact rational (then converts), otherwise a decimal literal.
/// Throws ConfigError.
double parse_rational(std::string_view text);

/// Flat key-value run configuration with dotted section prefixes:
///
///     # comment
///     stage1.lambda = 20
///     attack.epsilon = 10/255
///
/// Every key has a default; unknown keys and unparsable values raise ConfigError.
/// Values keep the text they were given, so serialize() is a fixed point of parse().
class RunConfig {
 public:
  /// Hyperparameters at full scale (batch 256, 50 epochs).
  static RunConfig defaults();
  /// Desk-scale preset: batch 128, 20/20 stage epochs, smaller encoder and schedules.
  static RunConfig desk();
  static RunConfig preset(std::string_view name);

  /// Applies `text` on top of `base`.
  static RunConfig parse(std::string_view text, RunConfig base = defaults());
  static RunConfig load(const std::filesystem::path& path, RunConfig base = defaults());

  /// Sorted "key = value" lines.
  std::string serialize() const;
  std::string hash() const;

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const;
  static std::vector<std::string> known_keys();

  double real(const std::string& key) const;
  int64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int64_t> int_list(const std::string& key) const;

  uint64_t seed() const;
  std::string experiment_name() const { return get("experiment_name"); }
  std::filesystem::path output_root() const { return get("output_root"); }

  Architecture architecture() const;
  PretrainConfig pretrain() const;
  AttackConfig attack() const;       // training attack
  AttackConfig eval_attack() const;  // evaluation PGD
  Stage1Config stage1() const;
  Stage1Config baseline() const;     // standard fine-tuning schedule
  RcConfig rc() const;
  Stage2Config stage2() const;
  /// which: "pretrain", "train" or "test".
  SyntheticConfig synthetic(std::string_view which) const;

  /// Builds every typed view; throws ConfigError on the first problem.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace genaf
