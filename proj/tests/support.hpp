#pragma once

#include <torch/torch.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>

#include "genaf/data.hpp"
#include "genaf/model.hpp"

namespace testing {

inline genaf::ImageBatch random_batch(int64_t n, std::array<int64_t, 3> shape, int64_t num_classes, uint64_t seed,
                                      torch::Dtype dtype = torch::kFloat32) {
  auto gen = genaf::make_generator(seed);
  genaf::ImageBatch b;
  b.pixels = torch::rand({n, shape[0], shape[1], shape[2]}, gen, torch::kFloat64).to(dtype);
  b.labels = torch::randint(0, num_classes, {n}, gen, torch::kLong);
  return b;
}

/// Copies `value` into the named parameter of a layer.
inline void set_param(genaf::DownstreamModel& model, const std::string& layer_id, const std::string& name,
                      const torch::Tensor& value) {
  const auto& rec = model.layer(layer_id);
  for (size_t i = 0; i < rec.param_names.size(); ++i) {
    if (rec.param_names[i] == name) {
      torch::NoGradGuard ng;
      rec.params[i].copy_(value.to(rec.params[i].dtype()).view_as(rec.params[i]));
      return;
    }
  }
  throw std::runtime_error("no parameter " + name + " in " + layer_id);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("genaf_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
