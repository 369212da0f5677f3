#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::adversaries {

/// Convolution whose weight is divided by its largest singular value (weight
/// reshaped to [out, in*k*k]) on every forward pass.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);
  torch::Tensor forward(const torch::Tensor& x);
  /// weight_orig / sigma, detached.
  torch::Tensor normalized_weight() const;

  torch::Tensor weight_orig, bias;

 private:
  torch::Tensor sigma() const;
  int64_t stride_, padding_;
};
TORCH_MODULE(SNConv2d);

/// Largest singular value of a conv weight reshaped to [out, in*k*k],
/// estimated with many power iterations from a fixed start.
double spectral_norm_estimate(const torch::Tensor& weight, int iterations = 200);

struct DiscriminatorConfig {
  std::vector<int64_t> global_widths{64, 128, 256, 512, 512};
  std::vector<int64_t> local_widths{64, 128, 256};
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// SN-PatchGAN style stack of stride-2 convolutions followed by a 3x3 score
/// head; output side = input side / 2^depth (rounded down per stage).
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(std::vector<int64_t> widths);
  torch::Tensor forward(const torch::Tensor& images);
  std::vector<SNConv2d> layers() const { return layers_; }

 private:
  std::vector<SNConv2d> layers_;
};
TORCH_MODULE(PatchDiscriminator);

enum class Region { LeftEye = 0, RightEye = 1, Mouth = 2 };
inline constexpr std::array<Region, 3> kRegions{Region::LeftEye, Region::RightEye, Region::Mouth};
std::string_view to_string(Region region);

struct CropSpec {
  Region region;
  int64_t height;
  int64_t width;
};

/// Crop sizes for a given image side: eyes 55x60 and mouth 44x90 at 256,
/// scaled proportionally.
CropSpec crop_spec(Region region, int64_t resolution);

/// Top-left corner of each region crop for each sample: [B, 3, 2] (y, x).
/// Centres come from label centroids (lip for the mouth); absent components
/// fall back to fixed face-layout priors. Boxes are clamped inside the image.
torch::Tensor crop_boxes(const torch::Tensor& labels);

/// Extracts the three crops [B, 3, h, w] with the given boxes.
std::array<torch::Tensor, 3> apply_crops(const torch::Tensor& images, const torch::Tensor& boxes);

/// Convenience: crop_boxes + apply_crops.
std::array<torch::Tensor, 3> crop_components(const torch::Tensor& images, const torch::Tensor& labels);

/// Three independent local discriminators, one per region, each checking its
/// input against the region's crop size.
class LocalDiscriminatorsImpl : public torch::nn::Module {
 public:
  LocalDiscriminatorsImpl(int64_t resolution, std::vector<int64_t> widths);
  torch::Tensor forward(const torch::Tensor& crop, Region region);
  PatchDiscriminator& at(Region region) { return nets_[static_cast<size_t>(region)]; }

 private:
  int64_t resolution_;
  std::array<PatchDiscriminator, 3> nets_{nullptr, nullptr, nullptr};
};
TORCH_MODULE(LocalDiscriminators);

}  // namespace refface::adversaries
