#include "refface/objectives.hpp"

namespace F = torch::nn::functional;

namespace refface::objectives {

double local_adversarial_gate(TrainingMode mode) { return mode == TrainingMode::Inpainting ? 1.0 : 0.0; }

torch::Tensor recon_l1(const torch::Tensor& output, const torch::Tensor& target) {
  return (output - target).abs().mean();
}

torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& output_features,
                              const std::vector<torch::Tensor>& target_features) {
  if (output_features.size() != target_features.size()) {
    throw std::invalid_argument("perceptual_loss: layer counts differ");
  }
  auto loss = torch::zeros({}, output_features.empty() ? torch::kFloat32 : output_features[0].scalar_type());
  for (size_t i = 0; i < output_features.size(); ++i) {
    loss = loss + (output_features[i] - target_features[i]).abs().mean();
  }
  return loss;
}

torch::Tensor perceptual_loss(const torch::Tensor& output, const torch::Tensor& target,
                              const perception::PerceptualNet& net) {
  std::vector<torch::Tensor> target_features;
  {
    torch::NoGradGuard no_grad;
    target_features = net.features(target);
  }
  return perceptual_loss(net.features(output), target_features);
}

torch::Tensor identity_loss_from_embeddings(const torch::Tensor& a, const torch::Tensor& b) {
  return (1.0 - F::cosine_similarity(a, b, F::CosineSimilarityFuncOptions().dim(1).eps(1e-12))).mean();
}

torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                            const perception::IdentityEmbedder& embedder) {
  torch::Tensor ref;
  {
    torch::NoGradGuard no_grad;
    ref = embedder.embed(reference);
  }
  return identity_loss_from_embeddings(embedder.embed(generated), ref);
}

torch::Tensor segmentation_loss(const std::vector<torch::Tensor>& seg_probs, const torch::Tensor& labels) {
  auto loss = torch::zeros({}, seg_probs.empty() ? torch::kFloat32 : seg_probs[0].scalar_type());
  for (const auto& probs : seg_probs) {
    auto target = downsample_labels(labels, probs.size(-1));
    auto log_p = torch::log(probs.clamp_min(1e-12));
    loss = loss + F::nll_loss(log_p, target);
  }
  return loss;
}

torch::Tensor adv_hinge_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return torch::relu(1.0 - real_scores).mean() + torch::relu(1.0 + fake_scores).mean();
}

torch::Tensor adv_hinge_g(const torch::Tensor& fake_scores) { return -fake_scores.mean(); }

torch::Tensor local_adv_d(const std::array<torch::Tensor, 3>& real_scores,
                          const std::array<torch::Tensor, 3>& fake_scores) {
  return adv_hinge_d(real_scores[0], fake_scores[0]) + adv_hinge_d(real_scores[1], fake_scores[1]) +
         adv_hinge_d(real_scores[2], fake_scores[2]);
}

torch::Tensor local_adv_g(const std::array<torch::Tensor, 3>& fake_scores) {
  return adv_hinge_g(fake_scores[0]) + adv_hinge_g(fake_scores[1]) + adv_hinge_g(fake_scores[2]);
}

TotalLoss total_loss(const LossTerms& terms, TrainingMode mode, const LossWeights& weights) {
  const double gate = local_adversarial_gate(mode);
  auto total = weights.reconstruction * terms.reconstruction + weights.perceptual * terms.perceptual +
               weights.identity * terms.identity + weights.segmentation * terms.segmentation + terms.adv_global;
  if (gate != 0.0) total = total + gate * terms.adv_local;

  LossReport r;
  r.reconstruction = terms.reconstruction.item<double>();
  r.perceptual = terms.perceptual.item<double>();
  r.identity = terms.identity.item<double>();
  r.segmentation = terms.segmentation.item<double>();
  r.adv_global = terms.adv_global.item<double>();
  r.adv_local = terms.adv_local.defined() ? terms.adv_local.item<double>() : 0.0;
  r.gate = gate;
  r.total = total.item<double>();
  return TotalLoss{total, r};
}

}  // namespace refface::objectives
