#pragma once

#include <filesystem>
#include <optional>

#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::io {

/// Decodes an image file to uint8 [3, H, W] RGB. Returns nullopt when the
/// file cannot be decoded.
std::optional<torch::Tensor> read_rgb(const std::filesystem::path& path);

/// Decodes a single-channel 8-bit image (label map or mask) to uint8 [H, W].
std::optional<torch::Tensor> read_gray(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const torch::Tensor& rgb8);
void write_gray(const std::filesystem::path& path, const torch::Tensor& gray8);

/// Area-resamples an RGB uint8 image to size x size.
torch::Tensor resize_rgb(const torch::Tensor& rgb8, int64_t size);
/// Nearest-resamples a uint8 label map to size x size.
torch::Tensor resize_labels(const torch::Tensor& labels8, int64_t size);

void write_mask(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path, int64_t size);

}  // namespace refface::io
