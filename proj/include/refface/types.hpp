#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace refface {

// Segmentation vocabulary shared by the toy renderer, parser adapters, the
// generator's segmentation branches and the evaluation code.
namespace seg_class {
inline constexpr int64_t kBackground = 0;
inline constexpr int64_t kSkin = 1;
inline constexpr int64_t kLeftEye = 2;
inline constexpr int64_t kRightEye = 3;
inline constexpr int64_t kLeftBrow = 4;
inline constexpr int64_t kRightBrow = 5;
inline constexpr int64_t kLip = 6;
inline constexpr int64_t kCount = 7;
}  // namespace seg_class

inline constexpr int64_t kNumComponents = 5;
inline constexpr int64_t kIdentityDim = 512;
inline constexpr int64_t kStyleDim = 512;

/// Row order of the style matrix and of the selected segmentation sub-map.
inline constexpr std::array<int64_t, kNumComponents> kComponentClasses = {
    seg_class::kLeftEye, seg_class::kRightEye, seg_class::kLeftBrow,
    seg_class::kRightBrow, seg_class::kLip};

inline constexpr std::array<std::string_view, kNumComponents> kComponentNames = {
    "left_eye", "right_eye", "left_brow", "right_brow", "lip"};

enum class TrainingMode { Inpainting, Segmentation, StyleExtracting };

std::string_view to_string(TrainingMode mode);
TrainingMode training_mode_from_string(std::string_view name);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AssetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary known/missing map. `values` is float32 [H, W]; 0 marks a missing
/// pixel, 1 a known one.
struct Mask {
  torch::Tensor values;

  int64_t height() const { return values.size(0); }
  int64_t width() const { return values.size(1); }
  double missing_fraction() const;
  bool is_binary() const;
};

/// Per-pixel class labels, int64 [H, W] with values in [0, num_classes).
struct SegMap {
  torch::Tensor labels;
  int64_t num_classes = seg_class::kCount;

  int64_t height() const { return labels.size(0); }
  int64_t width() const { return labels.size(1); }
  /// float32 [N, H, W] one-hot encoding.
  torch::Tensor one_hot() const;
  /// Boolean [H, W] map of the five component classes.
  torch::Tensor component_region() const;
  bool has_class(int64_t cls) const;
};

/// uint8 [3, H, W] -> float32 [3, H, W] in [-1, 1].
torch::Tensor to_model_range(const torch::Tensor& rgb8);
/// float [3, H, W] in [-1, 1] -> uint8 [3, H, W].
torch::Tensor to_rgb8(const torch::Tensor& image);

/// Nearest-neighbour downsampling of label maps, [B, H, W] or [H, W].
torch::Tensor downsample_labels(const torch::Tensor& labels, int64_t size);

}  // namespace refface
