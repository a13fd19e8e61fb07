#include "genaf/data.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>

#include "genaf/error.hpp"
#include "genaf/packed_array.hpp"

namespace genaf {

void ImageBatch::validate(int64_t num_classes) const {
  if (!pixels.defined() || pixels.dim() != 4)
    throw InputError("image batch: pixels must have shape (N, C, H, W)");
  if (pixels.size(0) < 1) throw InputError("image batch: N must be >= 1");
  if (!torch::isFloatingType(pixels.scalar_type()))
    throw InputError("image batch: pixels must be floating point");
  if (!labels.defined() || labels.dim() != 1 || labels.size(0) != pixels.size(0))
    throw InputError("image batch: labels length must equal N");
  const auto lo = pixels.min().item<double>();
  const auto hi = pixels.max().item<double>();
  if (!(lo >= 0.0 && hi <= 1.0))
    throw InputError("image batch: pixel values outside [0, 1]");
  if (num_classes > 0) {
    const auto lmin = labels.min().item<int64_t>();
    const auto lmax = labels.max().item<int64_t>();
    if (lmin < 0 || lmax >= num_classes)
      throw InputError("image batch: label outside [0, " + std::to_string(num_classes) + ")");
  }
}

ImageBatch ImageBatch::slice(int64_t begin, int64_t end) const {
  return {pixels.slice(0, begin, end), labels.slice(0, begin, end)};
}

ImageBatch ImageBatch::select(const torch::Tensor& indices) const {
  return {pixels.index_select(0, indices), labels.index_select(0, indices)};
}

ImageBatch ImageBatch::clone() const { return {pixels.clone(), labels.clone()}; }

ImageBatch ImageBatch::to(torch::Dtype dtype) const { return {pixels.to(dtype), labels}; }

ImageBatch concat(const std::vector<ImageBatch>& parts) {
  if (parts.empty()) throw InputError("concat: no batches");
  std::vector<torch::Tensor> px, lb;
  for (const auto& p : parts) {
    px.push_back(p.pixels);
    lb.push_back(p.labels);
  }
  return {torch::cat(px, 0), torch::cat(lb, 0)};
}

torch::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

std::vector<torch::Tensor> batch_indices(int64_t n, int64_t batch_size, bool shuffle,
                                         torch::Generator* gen) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  torch::Tensor order;
  if (shuffle) {
    if (gen == nullptr) throw InputError("batch_indices: shuffle needs a generator");
    order = torch::randperm(n, *gen, torch::kLong);
  } else {
    order = torch::arange(n, torch::kLong);
  }
  std::vector<torch::Tensor> out;
  for (int64_t b = 0; b < n; b += batch_size) out.push_back(order.slice(0, b, std::min(n, b + batch_size)));
  return out;
}

ImageBatch subset(const ImageBatch& data, int64_t count, uint64_t seed) {
  if (count >= data.size()) return data;
  auto gen = make_generator(seed);
  auto idx = torch::randperm(data.size(), gen, torch::kLong).slice(0, 0, count);
  return data.select(std::get<0>(idx.sort()));
}

ImageBatch load_image_folder(const std::filesystem::path& root, int64_t channels, int64_t hw) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError(root.string() + ": no class subfolders");

  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  for (size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      cv::Mat img = cv::imread(f.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
      if (img.empty()) continue;  // not a raster file
      if (hw > 0 && (img.rows != hw || img.cols != hw))
        cv::resize(img, img, cv::Size(static_cast<int>(hw), static_cast<int>(hw)), 0, 0, cv::INTER_AREA);
      if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
      if (!images.empty() && (img.rows != images.front().size(1) || img.cols != images.front().size(2)))
        throw IoError(f.string() + ": image size differs from the rest of the folder; pass a resize size");
      auto t = torch::from_blob(img.data, {img.rows, img.cols, img.channels()}, torch::kUInt8).clone();
      images.push_back(t.permute({2, 0, 1}).contiguous());
      labels.push_back(static_cast<int64_t>(c));
    }
  }
  if (images.empty()) throw IoError(root.string() + ": no readable images");
  auto px = torch::stack(images).to(torch::kFloat32).div_(255.0);
  return {px, torch::tensor(labels, torch::kLong)};
}

ImageBatch load_packed_dataset(const std::filesystem::path& path) {
  const auto file = read_packed(path);
  auto images = file.get("images");
  if (images.dim() != 4) throw IoError(path.string() + ": 'images' must be N x C x H x W");
  torch::Tensor px = images.scalar_type() == torch::kUInt8 ? images.to(torch::kFloat32).div_(255.0)
                                                          : images.to(torch::kFloat32);
  torch::Tensor labels = file.contains("labels") ? file.get("labels").to(torch::kLong)
                                                 : torch::zeros({images.size(0)}, torch::kLong);
  if (labels.dim() != 1 || labels.size(0) != px.size(0))
    throw IoError(path.string() + ": 'labels' length does not match 'images'");
  return {px, labels};
}

void save_packed_dataset(const ImageBatch& data, const std::filesystem::path& path, bool quantize_u8) {
  PackedFile file;
  auto px = data.pixels.detach().cpu();
  if (quantize_u8)
    px = px.mul(255.0).round_().clamp_(0, 255).to(torch::kUInt8);
  else
    px = px.to(torch::kFloat32);
  file.arrays.push_back({"images", px});
  file.arrays.push_back({"labels", data.labels.to(torch::kLong).cpu()});
  write_packed(path, file);
}

ImageBatch load_dataset(const std::filesystem::path& path, int64_t channels, int64_t hw) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path.string());
  if (std::filesystem::is_directory(path)) return load_image_folder(path, channels, hw);
  return load_packed_dataset(path);
}

}  // namespace genaf
