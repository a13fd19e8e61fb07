#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>

#include "genaf/model.hpp"

namespace genaf {

struct CheckpointMeta {
  std::string stage;  // "encoder", "baseline", "stage1", "stage2", ...
  int64_t epoch = 0;
  uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

// Checkpoint directory:
//   architecture.json  descriptor + layer list with parameter shapes
//   params.bin         packed array file, one array per "layer_id.name"
//   meta.json          CheckpointMeta
inline constexpr const char* kArchitectureFile = "architecture.json";
inline constexpr const char* kParamsFile = "params.bin";
inline constexpr const char* kMetaFile = "meta.json";

void save_checkpoint(const DownstreamModel& model, const std::filesystem::path& dir, const CheckpointMeta& meta);

/// Throws IoError (naming the file) for missing/corrupt content and ConfigError when
/// the parameter blob disagrees with the descriptor or with `expected`.
DownstreamModel load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr,
                                const std::optional<Architecture>& expected = std::nullopt);

}  // namespace genaf
