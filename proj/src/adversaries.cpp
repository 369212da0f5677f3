#include "refface/adversaries.hpp"

#include <cmath>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace refface::adversaries {
namespace {

torch::Tensor l2_normalize(const torch::Tensor& x) { return x / (x.norm() + 1e-12); }

// Fractional (y, x) centres used when a component is missing from the labels.
constexpr std::array<std::array<double, 2>, 3> kCentrePriors{{{0.44, 0.38}, {0.44, 0.62}, {0.70, 0.50}}};
constexpr std::array<int64_t, 3> kRegionClass{seg_class::kLeftEye, seg_class::kRightEye, seg_class::kLip};

}  // namespace

SNConv2dImpl::SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding)
    : stride_(stride), padding_(padding) {
  weight_orig = register_parameter("weight_orig", torch::empty({out, in, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out}));
  nn::init::kaiming_uniform_(weight_orig, std::sqrt(5.0));
}

// Exact rather than one warm-started power step: the top singular values of
// these weights sit close together, and a lagging estimate let the normalised
// norm drift well past 1 under Adam.
torch::Tensor SNConv2dImpl::sigma() const {
  return torch::linalg_svdvals(weight_orig.reshape({weight_orig.size(0), -1})).max();
}

torch::Tensor SNConv2dImpl::normalized_weight() const {
  torch::NoGradGuard no_grad;
  return weight_orig / sigma();
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, weight_orig / sigma(), F::Conv2dFuncOptions().bias(bias).stride(stride_).padding(padding_));
}

double spectral_norm_estimate(const torch::Tensor& weight, int iterations) {
  torch::NoGradGuard no_grad;
  auto w = weight.reshape({weight.size(0), -1}).to(torch::kFloat64);
  auto v = l2_normalize(torch::ones({w.size(1)}, torch::kFloat64));
  torch::Tensor u;
  for (int i = 0; i < iterations; ++i) {
    u = l2_normalize(torch::mv(w, v));
    v = l2_normalize(torch::mv(w.t(), u));
  }
  return torch::mv(w, v).norm().item<double>();
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(std::vector<int64_t> widths) {
  int64_t in = 3;
  for (size_t i = 0; i < widths.size(); ++i) {
    layers_.push_back(register_module("conv" + std::to_string(i), SNConv2d(in, widths[i], 4, 2, 1)));
    in = widths[i];
  }
  layers_.push_back(register_module("score", SNConv2d(in, 1, 3, 1, 1)));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& images) {
  auto x = images;
  for (size_t i = 0; i + 1 < layers_.size(); ++i) {
    x = F::leaky_relu(layers_[i]->forward(x), F::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return layers_.back()->forward(x);
}

std::string_view to_string(Region region) {
  switch (region) {
    case Region::LeftEye:
      return "left_eye";
    case Region::RightEye:
      return "right_eye";
    case Region::Mouth:
      return "mouth";
  }
  return "unknown";
}

CropSpec crop_spec(Region region, int64_t resolution) {
  const double scale = static_cast<double>(resolution) / 256.0;
  const bool mouth = region == Region::Mouth;
  return CropSpec{region, std::lround((mouth ? 44.0 : 55.0) * scale), std::lround((mouth ? 90.0 : 60.0) * scale)};
}

torch::Tensor crop_boxes(const torch::Tensor& labels) {
  const int64_t B = labels.size(0), H = labels.size(1), W = labels.size(2);
  auto boxes = torch::empty({B, 3, 2}, torch::kInt64);
  auto acc = boxes.accessor<int64_t, 3>();
  auto ys = torch::arange(H, torch::kFloat64).view({H, 1}).expand({H, W});
  auto xs = torch::arange(W, torch::kFloat64).view({1, W}).expand({H, W});
  for (int64_t b = 0; b < B; ++b) {
    for (size_t r = 0; r < 3; ++r) {
      const auto spec = crop_spec(kRegions[r], H);
      auto region = (labels[b] == kRegionClass[r]).to(torch::kFloat64);
      const double count = region.sum().item<double>();
      double cy = kCentrePriors[r][0] * H, cx = kCentrePriors[r][1] * W;
      if (count > 0) {
        cy = (region * ys).sum().item<double>() / count + 0.5;
        cx = (region * xs).sum().item<double>() / count + 0.5;
      }
      acc[b][static_cast<int64_t>(r)][0] =
          std::clamp<int64_t>(std::lround(cy - spec.height / 2.0), 0, H - spec.height);
      acc[b][static_cast<int64_t>(r)][1] = std::clamp<int64_t>(std::lround(cx - spec.width / 2.0), 0, W - spec.width);
    }
  }
  return boxes;
}

std::array<torch::Tensor, 3> apply_crops(const torch::Tensor& images, const torch::Tensor& boxes) {
  const int64_t B = images.size(0), H = images.size(2);
  auto acc = boxes.accessor<int64_t, 3>();
  std::array<torch::Tensor, 3> crops;
  for (size_t r = 0; r < 3; ++r) {
    const auto spec = crop_spec(kRegions[r], H);
    std::vector<torch::Tensor> parts;
    for (int64_t b = 0; b < B; ++b) {
      const int64_t y = acc[b][static_cast<int64_t>(r)][0], x = acc[b][static_cast<int64_t>(r)][1];
      parts.push_back(images[b].narrow(1, y, spec.height).narrow(2, x, spec.width));
    }
    crops[r] = torch::stack(parts);
  }
  return crops;
}

std::array<torch::Tensor, 3> crop_components(const torch::Tensor& images, const torch::Tensor& labels) {
  return apply_crops(images, crop_boxes(labels));
}

LocalDiscriminatorsImpl::LocalDiscriminatorsImpl(int64_t resolution, std::vector<int64_t> widths)
    : resolution_(resolution) {
  for (auto region : kRegions) {
    nets_[static_cast<size_t>(region)] = register_module(std::string(to_string(region)), PatchDiscriminator(widths));
  }
}

torch::Tensor LocalDiscriminatorsImpl::forward(const torch::Tensor& crop, Region region) {
  const auto spec = crop_spec(region, resolution_);
  if (crop.dim() != 4 || crop.size(2) != spec.height || crop.size(3) != spec.width) {
    throw std::invalid_argument("local discriminator '" + std::string(to_string(region)) + "' expects " +
                                std::to_string(spec.height) + "x" + std::to_string(spec.width) + " crops");
  }
  return nets_[static_cast<size_t>(region)]->forward(crop);
}

}  // namespace refface::adversaries
