#include "refface/model.hpp"

#include <algorithm>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace refface::model {
namespace {

nn::Conv2dOptions conv_options(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1) {
  return nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (encoder_widths.empty()) throw ConfigError("generator needs at least one encoder stage");
  if (encoder_widths.size() != decoder_widths.size()) {
    throw ConfigError("encoder and decoder stage counts differ (" + std::to_string(encoder_widths.size()) + " vs " +
                      std::to_string(decoder_widths.size()) + ")");
  }
  const int64_t factor = int64_t{1} << encoder_widths.size();
  if (resolution <= 0 || resolution % factor != 0) {
    throw ConfigError("resolution " + std::to_string(resolution) + " is not divisible by " + std::to_string(factor));
  }
  for (auto w : decoder_widths) {
    if (w <= 0 || w % 2 != 0) throw ConfigError("Half-AdaIN needs an even channel count, got " + std::to_string(w));
  }
  if (identity_dim <= 0 || style_dim <= 0 || style_hidden <= 0) throw ConfigError("embedding dims must be positive");
  if (num_classes <= *std::max_element(kComponentClasses.begin(), kComponentClasses.end())) {
    throw ConfigError("class vocabulary does not contain all five component classes");
  }
  for (auto r : cwsi_resolutions) {
    bool found = false;
    for (size_t s = 0; s < decoder_widths.size(); ++s) found = found || decoder_resolution(s) == r;
    if (!found) throw ConfigError("CWSI resolution " + std::to_string(r) + " is not a decoder stage resolution");
  }
}

int64_t GeneratorConfig::decoder_resolution(size_t stage) const {
  const auto stages = static_cast<int64_t>(decoder_widths.size());
  return resolution >> (stages - 1 - static_cast<int64_t>(stage));
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"resolution", c.resolution},       {"encoder_widths", c.encoder_widths},
          {"decoder_widths", c.decoder_widths}, {"identity_dim", c.identity_dim},
          {"style_dim", c.style_dim},         {"style_hidden", c.style_hidden},
          {"cwsi_resolutions", c.cwsi_resolutions}, {"num_classes", c.num_classes}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
  c.decoder_widths = j.value("decoder_widths", c.decoder_widths);
  c.identity_dim = j.value("identity_dim", c.identity_dim);
  c.style_dim = j.value("style_dim", c.style_dim);
  c.style_hidden = j.value("style_hidden", c.style_hidden);
  c.cwsi_resolutions = j.value("cwsi_resolutions", c.cwsi_resolutions);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

torch::Tensor instance_norm(const torch::Tensor& x, double eps) {
  auto mean = x.mean({-2, -1}, /*keepdim=*/true);
  auto var = (x - mean).pow(2).mean({-2, -1}, /*keepdim=*/true);
  return (x - mean) / torch::sqrt(var + eps);
}

// ---------------------------------------------------------------------------

GatedConv2dImpl::GatedConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride,
                                 bool activation)
    : activation_(activation) {
  feature = register_module("feature", nn::Conv2d(conv_options(in_channels, out_channels, kernel, stride)));
  gate = register_module("gate", nn::Conv2d(conv_options(in_channels, out_channels, kernel, stride)));
}

torch::Tensor GatedConv2dImpl::feature_branch(const torch::Tensor& x) {
  auto f = feature->forward(x);
  return activation_ ? F::leaky_relu(f, F::LeakyReLUFuncOptions().negative_slope(0.2)) : f;
}

torch::Tensor GatedConv2dImpl::gate_preactivation(const torch::Tensor& x) { return gate->forward(x); }

torch::Tensor GatedConv2dImpl::forward(const torch::Tensor& x) {
  return feature_branch(x) * torch::sigmoid(gate_preactivation(x));
}

// ---------------------------------------------------------------------------

HalfAdaINImpl::HalfAdaINImpl(int64_t in_channels, int64_t channels, int64_t identity_dim) : channels_(channels) {
  if (channels % 2 != 0) {
    throw ConfigError("Half-AdaIN channel count must be even, got " + std::to_string(channels));
  }
  const int64_t half = channels / 2;
  conv_in = register_module("conv_in", nn::Conv2d(conv_options(in_channels, channels, 3)));
  conv_identity = register_module("conv_identity", nn::Conv2d(conv_options(half, half, 3)));
  conv_gate = register_module("conv_gate", nn::Conv2d(conv_options(half, half, 3)));
  fc_gamma = register_module("fc_gamma", nn::Linear(identity_dim, half));
  fc_beta = register_module("fc_beta", nn::Linear(identity_dim, half));
  torch::NoGradGuard no_grad;
  fc_gamma->bias.fill_(1.0);
  fc_beta->bias.zero_();
}

torch::Tensor HalfAdaINImpl::modulate(const torch::Tensor& f1_hat, const torch::Tensor& gamma,
                                      const torch::Tensor& beta) {
  return gamma.unsqueeze(-1).unsqueeze(-1) * instance_norm(f1_hat) + beta.unsqueeze(-1).unsqueeze(-1);
}

HalfAdaINTrace HalfAdaINImpl::trace(const torch::Tensor& x, const torch::Tensor& z_id) {
  HalfAdaINTrace t;
  const int64_t half = channels_ / 2;
  t.f_hat = conv_in->forward(x);
  auto halves = t.f_hat.split(half, 1);
  t.f1 = halves[0];
  t.f2 = halves[1];
  t.f1_hat = conv_identity->forward(t.f1);
  t.f1_bar = instance_norm(t.f1_hat);
  t.gamma = fc_gamma->forward(z_id);
  t.beta = fc_beta->forward(z_id);
  t.f1_tilde = t.gamma.unsqueeze(-1).unsqueeze(-1) * t.f1_bar + t.beta.unsqueeze(-1).unsqueeze(-1);
  t.gate = torch::sigmoid(conv_gate->forward(t.f2));
  t.pre_relu = torch::cat({t.f1_tilde, t.f2 * t.gate}, 1);
  t.out = torch::relu(t.pre_relu);
  return t;
}

torch::Tensor HalfAdaINImpl::forward(const torch::Tensor& x, const torch::Tensor& z_id) { return trace(x, z_id).out; }

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(int64_t channels) {
  conv1 = register_module("conv1", nn::Conv2d(conv_options(channels, channels, 3)));
  conv2 = register_module("conv2", nn::Conv2d(conv_options(channels, channels, 3)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(x + conv2->forward(torch::relu(conv1->forward(x))));
}

torch::Tensor segmentation_select(const torch::Tensor& seg_probs) {
  if (seg_probs.size(1) <= *std::max_element(kComponentClasses.begin(), kComponentClasses.end())) {
    throw ConfigError("segmentation map has " + std::to_string(seg_probs.size(1)) +
                      " classes; the component mapping needs " + std::to_string(seg_class::kCount));
  }
  auto rows = torch::tensor(std::vector<int64_t>(kComponentClasses.begin(), kComponentClasses.end()),
                            torch::TensorOptions().dtype(torch::kInt64).device(seg_probs.device()));
  return seg_probs.index_select(1, rows);
}

torch::Tensor broadcast_style(const torch::Tensor& style, const torch::Tensor& selected) {
  const int64_t B = selected.size(0), K = selected.size(1), H = selected.size(2), W = selected.size(3);
  if (style.dim() != 3 || style.size(0) != B || style.size(1) != K) {
    throw std::invalid_argument("style matrix must be [B, 5, D] matching the selected map");
  }
  // [B, D, 5] x [B, 5, HW]
  return torch::bmm(style.transpose(1, 2), selected.reshape({B, K, H * W})).reshape({B, style.size(2), H, W});
}

CWSIImpl::CWSIImpl(int64_t channels, int64_t num_classes, int64_t style_dim, int64_t hidden) : style_dim_(style_dim) {
  res1 = register_module("res1", ResBlock(channels));
  res2 = register_module("res2", ResBlock(channels));
  classifier = register_module("classifier", nn::Conv2d(conv_options(channels, num_classes, 1)));
  shared = register_module("shared", nn::Conv2d(conv_options(style_dim, hidden, 1)));
  to_gamma = register_module("to_gamma", nn::Conv2d(conv_options(hidden, channels, 3)));
  to_beta = register_module("to_beta", nn::Conv2d(conv_options(hidden, channels, 3)));
  torch::NoGradGuard no_grad;
  to_gamma->bias.fill_(1.0);
  to_beta->bias.zero_();
}

CWSIOutput CWSIImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  auto sm = style.dim() == 2 ? style.unsqueeze(0).expand({x.size(0), style.size(0), style.size(1)}) : style;
  if (sm.dim() != 3 || sm.size(1) != kNumComponents || sm.size(2) != style_dim_ || sm.size(0) != x.size(0)) {
    throw std::invalid_argument("style matrix must have shape [B, 5, " + std::to_string(style_dim_) + "]");
  }
  CWSIOutput out;
  out.seg_logits = classifier->forward(res2->forward(res1->forward(x)));
  out.seg_probs = torch::softmax(out.seg_logits, 1);
  out.z_style = broadcast_style(sm, segmentation_select(out.seg_probs));
  auto h = torch::relu(shared->forward(out.z_style));
  out.features = torch::relu(to_gamma->forward(h) * instance_norm(x) + to_beta->forward(h));
  return out;
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  encoder = register_module("encoder", nn::ModuleList());
  decoder = register_module("decoder", nn::ModuleList());
  injectors = register_module("injectors", nn::ModuleList());

  int64_t in = 4;
  for (auto w : config_.encoder_widths) {
    encoder->push_back(GatedConv2d(in, w, 3, 2));
    in = w;
  }
  const size_t stages = config_.decoder_widths.size();
  for (size_t j = 0; j < stages; ++j) {
    const int64_t skip = j + 1 < stages ? config_.encoder_widths[stages - 2 - j] : 4;
    const int64_t out = config_.decoder_widths[j];
    decoder->push_back(HalfAdaIN(in + skip, out, config_.identity_dim));
    const int64_t res = config_.decoder_resolution(j);
    if (std::find(config_.cwsi_resolutions.begin(), config_.cwsi_resolutions.end(), res) !=
        config_.cwsi_resolutions.end()) {
      injector_stage_.push_back(static_cast<int64_t>(injectors->size()));
      injectors->push_back(CWSI(out, config_.num_classes, config_.style_dim, config_.style_hidden));
    } else {
      injector_stage_.push_back(-1);
    }
    in = out;
  }
  to_rgb = register_module("to_rgb", nn::Conv2d(conv_options(in, 3, 3)));
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& corrupted, const torch::Tensor& z_id,
                                       const torch::Tensor& style) {
  const int64_t R = config_.resolution;
  if (corrupted.dim() != 4 || corrupted.size(1) != 4 || corrupted.size(2) != R || corrupted.size(3) != R) {
    throw std::invalid_argument("generator expects corrupted input [B, 4, " + std::to_string(R) + ", " +
                                std::to_string(R) + "]");
  }
  if (z_id.dim() != 2 || z_id.size(1) != config_.identity_dim) {
    throw std::invalid_argument("identity vector must be [B, " + std::to_string(config_.identity_dim) + "]");
  }

  std::vector<torch::Tensor> skips;
  auto x = corrupted;
  for (const auto& stage : *encoder) {
    x = stage->as<GatedConv2d>()->forward(x);
    skips.push_back(x);
  }

  GeneratorOutput out;
  const size_t stages = decoder->size();
  for (size_t j = 0; j < stages; ++j) {
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    const auto& skip = j + 1 < stages ? skips[stages - 2 - j] : corrupted;
    x = decoder[j]->as<HalfAdaIN>()->forward(torch::cat({x, skip}, 1), z_id);
    if (injector_stage_[j] >= 0) {
      auto injected = injectors[static_cast<size_t>(injector_stage_[j])]->as<CWSI>()->forward(x, style);
      x = injected.features;
      out.seg_resolutions.push_back(config_.decoder_resolution(j));
      out.seg_logits.push_back(injected.seg_logits);
      out.seg_probs.push_back(injected.seg_probs);
    }
  }
  out.raw = torch::tanh(to_rgb->forward(x));
  auto known_rgb = corrupted.narrow(1, 0, 3);
  auto mask = corrupted.narrow(1, 3, 1);
  out.image = out.raw * (1 - mask) + known_rgb;
  return out;
}

}  // namespace refface::model
