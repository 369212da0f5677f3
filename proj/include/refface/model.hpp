#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::model {

struct GeneratorConfig {
  int64_t resolution = 256;
  /// Output widths of the stride-2 gated encoder stages (256 -> 8 by default).
  std::vector<int64_t> encoder_widths{64, 128, 256, 512, 512};
  /// Output widths of the decoder stages, coarsest first. Every entry is even.
  std::vector<int64_t> decoder_widths{512, 256, 128, 64, 64};
  int64_t identity_dim = kIdentityDim;
  int64_t style_dim = kStyleDim;
  /// Hidden width of the shared projection that maps z_style to gamma/beta.
  int64_t style_hidden = 128;
  std::vector<int64_t> cwsi_resolutions{64, 128};
  int64_t num_classes = seg_class::kCount;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// Spatial size produced by decoder stage `stage`.
  int64_t decoder_resolution(size_t stage) const;
  bool operator==(const GeneratorConfig&) const = default;
};

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Instance normalisation with biased variance, no affine parameters.
torch::Tensor instance_norm(const torch::Tensor& x, double eps = 1e-5);

/// feature_branch(x) * sigmoid(gate(x)).
class GatedConv2dImpl : public torch::nn::Module {
 public:
  GatedConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride, bool activation = true);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor feature_branch(const torch::Tensor& x);
  torch::Tensor gate_preactivation(const torch::Tensor& x);

  torch::nn::Conv2d feature{nullptr}, gate{nullptr};

 private:
  bool activation_;
};
TORCH_MODULE(GatedConv2d);

/// Intermediate tensors of one Half-AdaIN evaluation.
struct HalfAdaINTrace {
  torch::Tensor f_hat;      // conv(F)
  torch::Tensor f1, f2;     // channel halves of f_hat
  torch::Tensor f1_hat;     // conv(f1)
  torch::Tensor f1_bar;     // IN(f1_hat)
  torch::Tensor gamma, beta;
  torch::Tensor f1_tilde;   // gamma * f1_bar + beta
  torch::Tensor gate;       // sigmoid(conv(f2))
  torch::Tensor pre_relu;   // cat(f1_tilde, f2 * gate)
  torch::Tensor out;
};

/// Identity injection on the first half of the channels, gated bypass on the
/// second half.
class HalfAdaINImpl : public torch::nn::Module {
 public:
  HalfAdaINImpl(int64_t in_channels, int64_t channels, int64_t identity_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z_id);
  HalfAdaINTrace trace(const torch::Tensor& x, const torch::Tensor& z_id);
  /// AdaIN modulation of an already convolved half: gamma * IN(f1_hat) + beta.
  static torch::Tensor modulate(const torch::Tensor& f1_hat, const torch::Tensor& gamma, const torch::Tensor& beta);

  int64_t channels() const { return channels_; }

  torch::nn::Conv2d conv_in{nullptr}, conv_identity{nullptr}, conv_gate{nullptr};
  torch::nn::Linear fc_gamma{nullptr}, fc_beta{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(HalfAdaIN);

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

/// Picks the five component rows out of an N-class map [B, N, H, W].
torch::Tensor segmentation_select(const torch::Tensor& seg_probs);

/// z_style = SM^T x S_tilde. style [B, 5, D], selected [B, 5, H, W] -> [B, D, H, W].
torch::Tensor broadcast_style(const torch::Tensor& style, const torch::Tensor& selected);

struct CWSIOutput {
  torch::Tensor features;
  torch::Tensor seg_logits;
  torch::Tensor seg_probs;
  torch::Tensor z_style;
};

/// Component-wise style injector: predicts a segmentation map from the
/// features, broadcasts per-component style codes into the predicted regions
/// and denormalises the features with gamma/beta derived from them.
class CWSIImpl : public torch::nn::Module {
 public:
  CWSIImpl(int64_t channels, int64_t num_classes, int64_t style_dim, int64_t hidden);
  CWSIOutput forward(const torch::Tensor& x, const torch::Tensor& style);

  ResBlock res1{nullptr}, res2{nullptr};
  torch::nn::Conv2d classifier{nullptr}, shared{nullptr}, to_gamma{nullptr}, to_beta{nullptr};

 private:
  int64_t style_dim_;
};
TORCH_MODULE(CWSI);

struct GeneratorOutput {
  torch::Tensor image;  // composited, [B, 3, R, R] in [-1, 1]
  torch::Tensor raw;    // decoder output before compositing
  std::vector<int64_t> seg_resolutions;
  std::vector<torch::Tensor> seg_logits;
  std::vector<torch::Tensor> seg_probs;
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig config);
  /// corrupted [B, 4, R, R] (masked RGB + mask), z_id [B, identity_dim],
  /// style [B, 5, style_dim].
  GeneratorOutput forward(const torch::Tensor& corrupted, const torch::Tensor& z_id, const torch::Tensor& style);

  const GeneratorConfig& config() const { return config_; }

  torch::nn::ModuleList encoder{nullptr}, decoder{nullptr}, injectors{nullptr};
  torch::nn::Conv2d to_rgb{nullptr};

 private:
  GeneratorConfig config_;
  std::vector<int64_t> injector_stage_;  // decoder stage -> injector index or -1
};
TORCH_MODULE(Generator);

}  // namespace refface::model
