#include "genaf/checkpoint.hpp"

#include <fstream>

#include "genaf/error.hpp"
#include "genaf/packed_array.hpp"

namespace genaf {
namespace fs = std::filesystem;

nlohmann::json CheckpointMeta::to_json() const {
  return {{"stage", stage}, {"epoch", epoch}, {"seed", seed}, {"config_hash", config_hash}, {"extra", extra}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.stage = j.at("stage").get<std::string>();
  m.epoch = j.at("epoch").get<int64_t>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.value("config_hash", std::string{});
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing checkpoint file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint file " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const DownstreamModel& model, const fs::path& dir, const CheckpointMeta& meta) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::json arch = model.architecture().to_json();
  arch["dtype"] = std::string(c10::toString(model.dtype()));
  arch["layers"] = nlohmann::json::array();
  for (const auto& rec : model.layers()) {
    nlohmann::json shapes = nlohmann::json::object();
    for (size_t i = 0; i < rec.params.size(); ++i) shapes[rec.param_names[i]] = rec.params[i].sizes().vec();
    arch["layers"].push_back({{"layer_id", rec.layer_id},
                              {"role", to_string(rec.role)},
                              {"param_count", rec.param_count},
                              {"shapes", shapes}});
  }
  write_json(dir / kArchitectureFile, arch);

  PackedFile blob;
  for (const auto& [name, t] : model.named_state()) blob.arrays.push_back({name, t.detach()});
  write_packed(dir / kParamsFile, blob);
  write_json(dir / kMetaFile, meta.to_json());
}

DownstreamModel load_checkpoint(const fs::path& dir, CheckpointMeta* meta, const std::optional<Architecture>& expected) {
  const auto arch_json = read_json(dir / kArchitectureFile);
  const auto arch = Architecture::from_json(arch_json);
  if (expected && !(*expected == arch))
    throw ConfigError("checkpoint " + dir.string() + ": architecture differs from the expected one");

  DownstreamModel model(arch, 0);
  const auto dtype_name = arch_json.value("dtype", std::string("Float"));
  if (dtype_name == "Double") model.to(torch::kFloat64);

  if (arch_json.contains("layers")) {
    const auto& layers = arch_json.at("layers");
    if (layers.size() != model.layers().size())
      throw ConfigError("checkpoint " + dir.string() + ": layer list does not match the descriptor");
    for (size_t i = 0; i < layers.size(); ++i)
      if (layers[i].at("layer_id").get<std::string>() != model.layers()[i].layer_id ||
          layers[i].at("param_count").get<int64_t>() != model.layers()[i].param_count)
        throw ConfigError("checkpoint " + dir.string() + ": layer " + model.layers()[i].layer_id +
                          " does not match the descriptor");
  }

  const auto blob_path = dir / kParamsFile;
  if (!fs::exists(blob_path)) throw IoError("missing checkpoint file " + blob_path.string());
  const auto blob = read_packed(blob_path);
  auto state = model.named_state();
  if (blob.arrays.size() != state.size())
    throw ConfigError("checkpoint " + blob_path.string() + ": parameter blob does not match the architecture");
  torch::NoGradGuard ng;
  for (auto& [name, dst] : state) {
    if (!blob.contains(name))
      throw ConfigError("checkpoint " + blob_path.string() + ": missing parameter " + name);
    const auto& src = blob.get(name);
    if (src.sizes() != dst.sizes() || src.scalar_type() != dst.scalar_type())
      throw ConfigError("checkpoint " + blob_path.string() + ": shape/dtype mismatch for " + name);
    dst.copy_(src);
  }
  CheckpointMeta parsed;
  try {
    parsed = CheckpointMeta::from_json(read_json(dir / kMetaFile));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint file " + (dir / kMetaFile).string() + ": " + e.what());
  }
  if (meta != nullptr) *meta = std::move(parsed);
  return model;
}

}  // namespace genaf
