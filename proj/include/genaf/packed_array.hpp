#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace genaf {

// Packed array file layout (little endian):
//   8 bytes  magic "GENAFPK1"
//   u64      header length in bytes
//   header   JSON: {"arrays":[{"name","dtype","shape","offset","nbytes"}], "meta":{...}}
//   payload  raw array bytes, C order, offsets relative to payload start
// dtype is one of "u8", "i64", "f32", "f64".

struct PackedArray {
  std::string name;
  torch::Tensor data;
};

struct PackedFile {
  std::vector<PackedArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  /// Throws IoError naming the missing array.
  const torch::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_packed(const std::filesystem::path& path, const PackedFile& file);
PackedFile read_packed(const std::filesystem::path& path);

}  // namespace genaf
