#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::perception {

// ---------------------------------------------------------------------------
// Identity embedders
// ---------------------------------------------------------------------------

struct EmbedderConfig {
  /// "toy", "toy_alt" or "torchscript".
  std::string backend = "toy";
  std::optional<std::filesystem::path> asset;
  int64_t input_size = 64;
  uint64_t seed = 7;
};

struct EmbedderInfo {
  std::string backend;
  int64_t input_size = 0;
  int64_t output_dim = kIdentityDim;
};

/// Frozen face-recognition adapter. All inputs are [B, 3, H, W] in [-1, 1];
/// images are bilinearly resized to the adapter's input size (the toy
/// backends first crop the central half of the frame, where the face sits). Gradients flow to
/// the input image but never into the adapter.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  /// Unit-norm identity vectors [B, 512].
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
  /// Penultimate features used as the FID feature space.
  virtual torch::Tensor features(const torch::Tensor& images) const = 0;
  virtual EmbedderInfo info() const = 0;
  /// Every tensor the adapter holds; used to verify it stays frozen.
  virtual std::vector<torch::Tensor> state() const = 0;
};

std::unique_ptr<IdentityEmbedder> make_embedder(const EmbedderConfig& config);

// ---------------------------------------------------------------------------
// Face parser
// ---------------------------------------------------------------------------

struct ParserConfig {
  /// "toy" or "torchscript".
  std::string backend = "toy";
  std::optional<std::filesystem::path> asset;
  /// Maps the external parser's class indices onto the seven-class vocabulary.
  std::vector<int64_t> class_lookup{0, 1, 2, 3, 4, 5, 6};
};

class FaceParser {
 public:
  virtual ~FaceParser() = default;
  /// image uint8 [3, H, W] -> label map.
  virtual SegMap parse(const torch::Tensor& rgb8) const = 0;
  virtual std::string backend() const = 0;
};

std::unique_ptr<FaceParser> make_parser(const ParserConfig& config);

// ---------------------------------------------------------------------------
// Perceptual features
// ---------------------------------------------------------------------------

struct PerceptualConfig {
  /// "toy" or "torchscript".
  std::string backend = "toy";
  std::optional<std::filesystem::path> asset;
  /// Number of backbone stages whose outputs are compared.
  int64_t layers = 5;
  uint64_t seed = 11;
};

class PerceptualNet {
 public:
  virtual ~PerceptualNet() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
  virtual int64_t layer_count() const = 0;
};

std::unique_ptr<PerceptualNet> make_perceptual(const PerceptualConfig& config);

// ---------------------------------------------------------------------------
// Region-wise style encoder (trainable)
// ---------------------------------------------------------------------------

struct StyleEncoderConfig {
  std::vector<int64_t> widths{64, 128, 256, kStyleDim};
  bool operator==(const StyleEncoderConfig&) const = default;
};

/// Four stride-2 convolution stages down to a style_dim-channel map.
class StyleEncoderImpl : public torch::nn::Module {
 public:
  explicit StyleEncoderImpl(StyleEncoderConfig config = {});
  torch::Tensor forward(const torch::Tensor& images);
  int64_t style_dim() const { return config_.widths.back(); }

  torch::nn::Sequential body{nullptr};

 private:
  StyleEncoderConfig config_;
};
TORCH_MODULE(StyleEncoder);

/// Average of the (nearest-upsampled) feature map over each component's pixels.
/// features [B, D, h, w]; labels [B, H, W] with H, W integer multiples of h, w.
/// Returns [B, 5, D]; rows of absent components are zero.
torch::Tensor region_pool(const torch::Tensor& features, const torch::Tensor& labels);

/// Which target components have at least one pixel in the known region.
/// target_labels [B, H, W], mask [B, H, W] (1 = known). Returns bool [B, 5].
torch::Tensor visible_components(const torch::Tensor& target_labels, const torch::Tensor& mask);

/// Region-pooled style codes of the reference with the rows of visible target
/// components set to exactly zero.
torch::Tensor extract_style_matrix(StyleEncoder& encoder, const torch::Tensor& reference,
                                   const torch::Tensor& reference_labels, const torch::Tensor& visible);

/// Same as above from precomputed encoder features.
torch::Tensor style_matrix_from_features(const torch::Tensor& features, const torch::Tensor& reference_labels,
                                         const torch::Tensor& visible);

}  // namespace refface::perception
