#include "refface/types.hpp"

namespace F = torch::nn::functional;

namespace refface {

std::string_view to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::Inpainting:
      return "inpainting";
    case TrainingMode::Segmentation:
      return "segmentation";
    case TrainingMode::StyleExtracting:
      return "style_extracting";
  }
  return "unknown";
}

TrainingMode training_mode_from_string(std::string_view name) {
  if (name == "inpainting") return TrainingMode::Inpainting;
  if (name == "segmentation") return TrainingMode::Segmentation;
  if (name == "style_extracting") return TrainingMode::StyleExtracting;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

double Mask::missing_fraction() const {
  return 1.0 - values.to(torch::kFloat64).mean().item<double>();
}

bool Mask::is_binary() const {
  return torch::logical_or(values == 0, values == 1).all().item<bool>();
}

torch::Tensor SegMap::one_hot() const {
  return F::one_hot(labels, num_classes).permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

torch::Tensor SegMap::component_region() const {
  auto region = torch::zeros_like(labels, torch::kBool);
  for (int64_t cls : kComponentClasses) region = torch::logical_or(region, labels == cls);
  return region;
}

bool SegMap::has_class(int64_t cls) const { return (labels == cls).any().item<bool>(); }

torch::Tensor to_model_range(const torch::Tensor& rgb8) {
  return rgb8.to(torch::kFloat32).div(127.5).sub(1.0);
}

torch::Tensor to_rgb8(const torch::Tensor& image) {
  return image.detach().to(torch::kFloat32).add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8);
}

torch::Tensor downsample_labels(const torch::Tensor& labels, int64_t size) {
  const bool batched = labels.dim() == 3;
  auto x = batched ? labels.unsqueeze(1) : labels.unsqueeze(0).unsqueeze(0);
  if (x.size(-1) == size && x.size(-2) == size) return labels;
  auto down = F::interpolate(x.to(torch::kFloat32),
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{size, size})
                                 .mode(torch::kNearest))
                  .round()
                  .to(torch::kInt64);
  return batched ? down.squeeze(1) : down.squeeze(0).squeeze(0);
}

}  // namespace refface
