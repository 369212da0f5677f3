#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "refface/perception.hpp"
#include "refface/types.hpp"

namespace refface::objectives {

struct LossWeights {
  double reconstruction = 20.0;
  double perceptual = 10.0;
  double identity = 3.0;
  double segmentation = 2.5;

  bool operator==(const LossWeights&) const = default;
};

/// Local adversarial gate: 1 only in inpainting mode.
double local_adversarial_gate(TrainingMode mode);

/// Mean absolute RGB difference.
torch::Tensor recon_l1(const torch::Tensor& output, const torch::Tensor& target);

/// Sum over layers of the mean L1 distance between feature maps.
torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& output_features,
                              const std::vector<torch::Tensor>& target_features);
torch::Tensor perceptual_loss(const torch::Tensor& output, const torch::Tensor& target,
                              const perception::PerceptualNet& net);

/// 1 - cos(a, b), averaged over the batch. Inputs [B, D].
torch::Tensor identity_loss_from_embeddings(const torch::Tensor& a, const torch::Tensor& b);
torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                            const perception::IdentityEmbedder& embedder);

/// Mean per-pixel cross-entropy of each probability map [B, N, h, w] against
/// the labels [B, H, W] nearest-downsampled to h x w, summed over maps.
torch::Tensor segmentation_loss(const std::vector<torch::Tensor>& seg_probs, const torch::Tensor& labels);

torch::Tensor adv_hinge_d(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor adv_hinge_g(const torch::Tensor& fake_scores);

/// Sum of three per-region discriminator hinge losses.
torch::Tensor local_adv_d(const std::array<torch::Tensor, 3>& real_scores,
                          const std::array<torch::Tensor, 3>& fake_scores);
/// Sum of three per-region generator hinge losses.
torch::Tensor local_adv_g(const std::array<torch::Tensor, 3>& fake_scores);

struct LossTerms {
  torch::Tensor reconstruction, perceptual, identity, segmentation, adv_global, adv_local;
};

struct LossReport {
  double reconstruction = 0, perceptual = 0, identity = 0, segmentation = 0;
  double adv_global = 0, adv_local = 0;
  double gate = 0;
  double total = 0;
};

struct TotalLoss {
  torch::Tensor total;
  LossReport report;
};

/// Weighted generator objective; adv_local enters only when the gate is open.
TotalLoss total_loss(const LossTerms& terms, TrainingMode mode, const LossWeights& weights = {});

}  // namespace refface::objectives
