#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "refface/data.hpp"
#include "refface/perception.hpp"
#include "refface/trainer.hpp"

namespace refface::evaluation {

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, symmetrised
};

/// features [N, D] with N >= 2.
FeatureStats feature_stats(const torch::Tensor& features);

/// Frechet distance between two Gaussian fits. Matrix square roots go through
/// symmetric eigendecompositions with negative eigenvalues clipped to zero.
double fid(const FeatureStats& a, const FeatureStats& b);

/// Per-image distance between unit-normalised feature channels, averaged over
/// space and summed over layers. Returns [B].
torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, const perception::PerceptualNet& net);

struct RetrievalPool {
  std::vector<std::string> identities;
  torch::Tensor embeddings;  // [P, D], unit norm
};

/// Percentage of queries whose cosine-nearest pool member shares their
/// identity. Ties go to the lowest pool index. Throws on an empty pool.
double idr(const torch::Tensor& query_embeddings, const std::vector<std::string>& query_identities,
           const RetrievalPool& pool);

/// Percentage of pairs with cosine similarity >= threshold.
double frr(const torch::Tensor& generated_embeddings, const torch::Tensor& reference_embeddings,
           double threshold = 0.7);

struct SegQuality {
  double miou = 0;
  double accuracy = 0;
};

/// Accumulates a confusion matrix over many label maps.
class SegConfusion {
 public:
  explicit SegConfusion(int64_t num_classes = seg_class::kCount);
  /// predicted, truth: integer label maps of equal shape.
  void add(const torch::Tensor& predicted, const torch::Tensor& truth);
  /// mIoU over classes present in prediction or truth (optionally restricted
  /// to `classes`); accuracy over all pixels.
  SegQuality result(const std::optional<std::vector<int64_t>>& classes = std::nullopt) const;

 private:
  int64_t num_classes_;
  torch::Tensor counts_;  // [truth, predicted], int64
};

SegQuality seg_quality(const torch::Tensor& predicted, const torch::Tensor& truth,
                       int64_t num_classes = seg_class::kCount,
                       const std::optional<std::vector<int64_t>>& classes = std::nullopt);

/// Nominal mask-rate buckets 0.2 / 0.3 / 0.4 with boundaries at 0.25 and 0.35.
inline constexpr std::array<double, 3> kMaskRateBuckets{0.2, 0.3, 0.4};
size_t mask_rate_bucket(double missing_fraction);

struct BucketReport {
  double rate = 0;
  int64_t samples = 0;
  double fid = 0;
  double perceptual = 0;
  double idr = 0;
  double frr = 0;
};

struct MetricReport {
  double fid = 0;
  double perceptual = 0;
  double idr = 0;
  double frr = 0;
  double miou = 0;
  double accuracy = 0;
  int64_t samples = 0;
  std::vector<BucketReport> buckets;
};

std::string metric_csv_header();
std::vector<std::string> metric_csv_rows(const MetricReport& report);
std::string summary(const MetricReport& report);

struct EvalOptions {
  std::vector<double> mask_rates{0.2, 0.3, 0.4};
  /// Segmentation branch resolution used for mIoU / Acc.
  int64_t seg_resolution = 128;
  int64_t batch_size = 8;
  uint64_t seed = 0;
  /// Recognizer used for IDR and FRR; a different model than training uses.
  perception::EmbedderConfig retrieval_embedder{"toy_alt", std::nullopt, 64, 23};
};

/// Segmentation quality of the generator's segmentation branch on
/// Segmentation-mode masks with the ground truth as reference.
SegQuality evaluate_segmentation(model::Generator& generator, perception::StyleEncoder& encoder,
                                 const training::TrainerConfig& config, const data::IdentityCorpus& corpus,
                                 const perception::FaceParser& parser, const perception::IdentityEmbedder& embedder,
                                 int64_t seg_resolution, int64_t batch_size, std::mt19937_64& rng);

/// Full protocol over a held-out corpus. The first image of each identity is
/// the target, the second the reference; the rest form the retrieval pool.
MetricReport evaluate(model::Generator& generator, perception::StyleEncoder& encoder,
                      const training::TrainerConfig& config, const data::IdentityCorpus& corpus,
                      const EvalOptions& options);

}  // namespace refface::evaluation
