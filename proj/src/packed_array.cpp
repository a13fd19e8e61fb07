#include "genaf/packed_array.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "genaf/error.hpp"

namespace genaf {
namespace {

constexpr std::array<char, 8> kMagic = {'G', 'E', 'N', 'A', 'F', 'P', 'K', '1'};

std::string dtype_name(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kUInt8: return "u8";
    case torch::kInt64: return "i64";
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    default: throw InputError("packed array: unsupported dtype " + std::string(c10::toString(dtype)));
  }
}

torch::Dtype dtype_from_name(const std::string& name, const std::filesystem::path& path) {
  if (name == "u8") return torch::kUInt8;
  if (name == "i64") return torch::kInt64;
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  throw IoError(path.string() + ": unknown dtype '" + name + "'");
}

}  // namespace

const torch::Tensor& PackedFile::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.data;
  throw IoError("packed file has no array '" + name + "'");
}

bool PackedFile::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_packed(const std::filesystem::path& path, const PackedFile& file) {
  nlohmann::json header;
  header["arrays"] = nlohmann::json::array();
  header["meta"] = file.meta;
  std::vector<torch::Tensor> payloads;
  uint64_t offset = 0;
  for (const auto& a : file.arrays) {
    auto t = a.data.detach().contiguous().cpu();
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    header["arrays"].push_back({{"name", a.name},
                                {"dtype", dtype_name(t.scalar_type())},
                                {"shape", t.sizes().vec()},
                                {"offset", offset},
                                {"nbytes", nbytes}});
    offset += nbytes;
    payloads.push_back(std::move(t));
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const uint64_t len = text.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payloads)
    out.write(static_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
  if (!out) throw IoError("write failed: " + path.string());
}

PackedFile read_packed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + ": not a packed array file");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw IoError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt header: " + e.what());
  }
  const auto payload_start = in.tellg();
  PackedFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  try {
    for (const auto& entry : header.at("arrays")) {
      const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>(), path);
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<uint64_t>();
      const auto nbytes = entry.at("nbytes").get<uint64_t>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes)
        throw IoError(path.string() + ": size mismatch for array " + entry.at("name").get<std::string>());
      in.seekg(payload_start + static_cast<std::streamoff>(offset));
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) throw IoError(path.string() + ": truncated payload");
      file.arrays.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }
  return file;
}

}  // namespace genaf
