#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "refface/adversaries.hpp"
#include "refface/data.hpp"
#include "refface/masking.hpp"
#include "refface/model.hpp"
#include "refface/objectives.hpp"
#include "refface/perception.hpp"

namespace refface::training {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t epochs = 300;
  int64_t batch_size = 4;
  bool operator==(const OptimizerConfig&) const = default;
};

struct MaskConfig {
  masking::MaskSpec free_form;
  /// Inpainting-mode coverage buckets; one is drawn uniformly per sample.
  std::vector<double> rates{0.2, 0.3, 0.4};
  masking::SegmentationMaskOptions segmentation;
  /// StyleExtracting-mode dilation in pixels at 256x256, scaled with resolution.
  double style_dilation_256 = 4.0;
};

struct TrainerConfig {
  model::GeneratorConfig generator;
  perception::StyleEncoderConfig style_encoder;
  adversaries::DiscriminatorConfig discriminators;
  OptimizerConfig optimizer;
  objectives::LossWeights weights;
  MaskConfig masks;
  perception::EmbedderConfig embedder;
  perception::ParserConfig parser;
  perception::PerceptualConfig perceptual;
  /// Single-mode training: every step runs in inpainting mode.
  bool single_mode = false;
  uint64_t seed = 0;
  /// Consecutive non-finite steps tolerated before training halts.
  int nonfinite_limit = 10;
};

nlohmann::json to_json(const TrainerConfig& config);
TrainerConfig trainer_config_from_json(const nlohmann::json& j);

/// Period-4 schedule [Inpainting, Segmentation, Inpainting, StyleExtracting];
/// all Inpainting when `single_mode`.
TrainingMode tmt_schedule(int64_t step, bool single_mode = false);

/// Batched inputs for one training or evaluation step.
struct ModeInputs {
  TrainingMode mode = TrainingMode::Inpainting;
  torch::Tensor target;         // [B, 3, R, R], model range; ground truth
  torch::Tensor reference;      // [B, 3, R, R]
  torch::Tensor mask;           // [B, R, R], 1 = known
  torch::Tensor corrupted;      // [B, 4, R, R]
  torch::Tensor seg_target;     // [B, R, R] labels
  torch::Tensor seg_reference;  // [B, R, R] labels
  torch::Tensor visible;        // [B, 5] target components visible in the known region
  torch::Tensor z_id;           // [B, 512]
  std::vector<std::string> identities;
};

/// Draws a mode-specific mask for each pair, picks the reference (the target
/// itself outside inpainting mode), parses missing label maps and embeds the
/// reference identity.
ModeInputs build_mode_inputs(const std::vector<data::SamplePair>& pairs, TrainingMode mode, const MaskConfig& masks,
                             int64_t resolution, const perception::FaceParser& parser,
                             const perception::IdentityEmbedder& embedder, std::mt19937_64& rng);

/// Style matrix of the reference with visible target rows zeroed. Gradients
/// reach the encoder only in StyleExtracting mode.
torch::Tensor style_matrix(perception::StyleEncoder& encoder, const ModeInputs& inputs);

struct StepRecord {
  int64_t step = 0;
  TrainingMode mode = TrainingMode::Inpainting;
  objectives::LossReport losses;
  double d_global = 0;
  double d_local = 0;
  bool finite = true;
  std::vector<std::string> updated_groups;
};

class TrainingHalted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter groups: "generator", "style_encoder", "global_disc", "local_discs".
class Trainer {
 public:
  /// `corpus` may be null for inference-only use.
  Trainer(TrainerConfig config, std::shared_ptr<const data::IdentityCorpus> corpus);

  const TrainerConfig& config() const { return config_; }
  int64_t step_count() const { return step_; }

  ModeInputs build_mode_inputs(const std::vector<data::SamplePair>& pairs, TrainingMode mode, std::mt19937_64& rng) const;
  /// Samples a batch from the corpus with the trainer's RNG.
  ModeInputs sample_inputs(TrainingMode mode);

  model::GeneratorOutput generate(const ModeInputs& inputs);

  /// One discriminator update followed by one generator update.
  StepRecord train_step(const ModeInputs& inputs);
  /// Samples a batch for the scheduled mode and trains on it.
  StepRecord step();

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer state, RNG state and the step counter.
  /// Throws ConfigError when the stored model configuration differs.
  void load_checkpoint(const std::filesystem::path& path);

  model::Generator& generator() { return generator_; }
  perception::StyleEncoder& style_encoder() { return style_encoder_; }
  adversaries::PatchDiscriminator& global_disc() { return global_disc_; }
  adversaries::LocalDiscriminators& local_discs() { return local_discs_; }
  const perception::IdentityEmbedder& embedder() const { return *embedder_; }
  const perception::FaceParser& parser() const { return *parser_; }
  const perception::PerceptualNet& perceptual() const { return *perceptual_; }

 private:
  TrainerConfig config_;
  std::shared_ptr<const data::IdentityCorpus> corpus_;
  std::mt19937_64 rng_;
  int64_t step_ = 0;
  int consecutive_nonfinite_ = 0;

  model::Generator generator_{nullptr};
  perception::StyleEncoder style_encoder_{nullptr};
  adversaries::PatchDiscriminator global_disc_{nullptr};
  adversaries::LocalDiscriminators local_discs_{nullptr};
  std::unique_ptr<perception::IdentityEmbedder> embedder_;
  std::unique_ptr<perception::FaceParser> parser_;
  std::unique_ptr<perception::PerceptualNet> perceptual_;

  std::unique_ptr<torch::optim::Adam> opt_generator_, opt_style_, opt_global_, opt_local_;
};

/// Generator + style encoder restored from a checkpoint, for inference.
struct InferenceModel {
  TrainerConfig config;
  model::Generator generator{nullptr};
  perception::StyleEncoder style_encoder{nullptr};
  int64_t step = 0;
};

InferenceModel load_inference_model(const std::filesystem::path& path);

/// Rows of [target | corrupted | reference | output] as a uint8 [3, H, W] image.
torch::Tensor sample_grid(const ModeInputs& inputs, const torch::Tensor& output);

/// Parameters and buffers of a module flattened into cloned tensors, for
/// bitwise comparisons.
std::vector<torch::Tensor> snapshot(const torch::nn::Module& module);
bool bitwise_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);

}  // namespace refface::training
