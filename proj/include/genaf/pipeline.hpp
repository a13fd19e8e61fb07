#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "genaf/config.hpp"
#include "genaf/data.hpp"
#include "genaf/model.hpp"

namespace genaf {

// Experiment directory:
//   config.txt                 serialized RunConfig
//   encoder/                   provisioned encoder (pre-trained or copied)
//   checkpoints/{baseline,stage1,stage2}/
//   logs/{pretrain,baseline,stage1,stage2}.jsonl
//   sensitivity.json
//   uap.bin                    universal perturbation shared by all evaluations
//   metrics/<model>_{clean,pgd,uap}.json
//   summary.json
//   manifest.json              written last; lists every other file
inline constexpr const char* kManifestFile = "manifest.json";

/// Resolves a data split: "synthetic" draws from the generator, anything else is a path.
ImageBatch load_split(const RunConfig& cfg, std::string_view which);

/// Loads encoder.checkpoint or pre-trains one, then gives it a fresh classifier.
DownstreamModel provision_encoder(const RunConfig& cfg, const std::filesystem::path& log_path = {});

/// Baseline, stage 1, rank-layers, stage 2, evaluation. A stage whose epoch count is 0
/// is skipped (stage 1 also skips ranking and stage 2). Returns the experiment directory,
/// `out_dir` or output_root/experiment_name. Failures rethrow the original error type
/// with the stage name prefixed, after writing a partial manifest.
std::filesystem::path run_pipeline(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {});

enum class SweepAxis { lambda, epsilon, learning_rates, topk_ratio };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view text);

/// Applies one sweep value to a config. learning_rates takes "lr_e:lr_c" or "shared:lr".
RunConfig apply_sweep_value(RunConfig cfg, SweepAxis axis, const std::string& value);

/// One pipeline run per value under <sweep>/point_<i>, all sharing one encoder.
/// Writes table.json and table.csv with (value, ta, ra, asr) of the final model under PGD.
std::filesystem::path run_ablation(const RunConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                                   const std::optional<std::filesystem::path>& out_dir = {});

struct ManifestEntry {
  std::string path;  // relative to the experiment directory, '/' separated
  std::string sha256;
  uint64_t bytes = 0;
  /// Files carrying wall-clock fields; `stable_sha256` hashes them with those fields removed.
  bool timing = false;
  std::string stable_sha256;
};

struct Manifest {
  std::string status;  // "complete" or "failed"
  std::string failed_stage;
  std::string config_hash;
  std::string config;  // embedded serialization
  std::vector<ManifestEntry> files;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  static Manifest load(const std::filesystem::path& experiment_dir);
};

/// Hashes every file under `dir` except the manifest itself.
Manifest build_manifest(const std::filesystem::path& dir, const RunConfig& cfg, std::string status = "complete",
                        std::string failed_stage = "");
void write_manifest(const std::filesystem::path& dir, const Manifest& m);

/// Returns the problems found (missing, changed, or unlisted files); empty when intact.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

/// SHA-256 of the file with wall-clock fields stripped (JSON and JSONL files only).
std::string stable_file_hash(const std::filesystem::path& path);

}  // namespace genaf
