#include "refface/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace F = torch::nn::functional;

namespace refface::evaluation {
namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(d.size(0), d.size(1));
  auto acc = d.accessor<double, 2>();
  for (int64_t i = 0; i < d.size(0); ++i)
    for (int64_t j = 0; j < d.size(1); ++j) m(i, j) = acc[i][j];
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

torch::Tensor normalize_rows(const torch::Tensor& x) {
  return F::normalize(x.to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

FeatureStats feature_stats(const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 2) {
    throw std::invalid_argument("feature_stats needs a [N, D] matrix with N >= 2");
  }
  const auto x = to_eigen(features);
  FeatureStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - s.mean.transpose();
  s.cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw std::invalid_argument("fid: feature dimensions differ (" + std::to_string(a.mean.size()) + " vs " +
                                std::to_string(b.mean.size()) + ")");
  }
  const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
}

torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                                  const perception::PerceptualNet& net) {
  torch::NoGradGuard no_grad;
  const auto fa = net.features(a);
  const auto fb = net.features(b);
  auto d = torch::zeros({a.size(0)}, torch::kFloat64);
  for (size_t i = 0; i < fa.size(); ++i) {
    auto na = F::normalize(fa[i].to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-10));
    auto nb = F::normalize(fb[i].to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-10));
    d = d + (na - nb).pow(2).sum(1).mean({1, 2});
  }
  return d;
}

double idr(const torch::Tensor& query_embeddings, const std::vector<std::string>& query_identities,
           const RetrievalPool& pool) {
  if (pool.identities.empty()) throw std::invalid_argument("idr: retrieval pool is empty");
  if (query_embeddings.size(0) != static_cast<int64_t>(query_identities.size())) {
    throw std::invalid_argument("idr: query embeddings and identities differ in length");
  }
  if (query_identities.empty()) return 0.0;
  auto sim = torch::mm(normalize_rows(query_embeddings), normalize_rows(pool.embeddings).t());
  auto nearest = sim.argmax(1);
  auto acc = nearest.accessor<int64_t, 1>();
  int64_t hits = 0;
  for (size_t q = 0; q < query_identities.size(); ++q) {
    hits += pool.identities[static_cast<size_t>(acc[static_cast<int64_t>(q)])] == query_identities[q];
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(query_identities.size());
}

double frr(const torch::Tensor& generated_embeddings, const torch::Tensor& reference_embeddings, double threshold) {
  if (generated_embeddings.sizes() != reference_embeddings.sizes()) {
    throw std::invalid_argument("frr: embedding lists are not paired");
  }
  if (generated_embeddings.size(0) == 0) return 0.0;
  auto cos = (normalize_rows(generated_embeddings) * normalize_rows(reference_embeddings)).sum(1);
  return 100.0 * (cos >= threshold).to(torch::kFloat64).mean().item<double>();
}

SegConfusion::SegConfusion(int64_t num_classes)
    : num_classes_(num_classes), counts_(torch::zeros({num_classes * num_classes}, torch::kInt64)) {}

void SegConfusion::add(const torch::Tensor& predicted, const torch::Tensor& truth) {
  if (predicted.sizes() != truth.sizes()) throw std::invalid_argument("segmentation maps are not aligned");
  auto idx = truth.to(torch::kInt64).flatten() * num_classes_ + predicted.to(torch::kInt64).flatten();
  counts_ += torch::bincount(idx, {}, num_classes_ * num_classes_);
}

SegQuality SegConfusion::result(const std::optional<std::vector<int64_t>>& classes) const {
  auto m = counts_.view({num_classes_, num_classes_}).to(torch::kFloat64);
  auto tp = m.diagonal();
  auto truth = m.sum(1), pred = m.sum(0);
  SegQuality q;
  const double total = m.sum().item<double>();
  q.accuracy = total > 0 ? tp.sum().item<double>() / total : 0.0;

  std::vector<int64_t> selected;
  if (classes) {
    selected = *classes;
  } else {
    for (int64_t c = 0; c < num_classes_; ++c) selected.push_back(c);
  }
  double iou_sum = 0;
  int64_t present = 0;
  for (int64_t c : selected) {
    const double t = truth[c].item<double>(), p = pred[c].item<double>(), i = tp[c].item<double>();
    if (t + p == 0) continue;
    iou_sum += i / (t + p - i);
    ++present;
  }
  q.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
  return q;
}

SegQuality seg_quality(const torch::Tensor& predicted, const torch::Tensor& truth, int64_t num_classes,
                       const std::optional<std::vector<int64_t>>& classes) {
  SegConfusion c(num_classes);
  c.add(predicted, truth);
  return c.result(classes);
}

size_t mask_rate_bucket(double missing_fraction) {
  if (missing_fraction < 0.25) return 0;
  if (missing_fraction < 0.35) return 1;
  return 2;
}

std::string metric_csv_header() { return "scope,rate,samples,fid,perceptual,idr,frr,miou,accuracy"; }

std::vector<std::string> metric_csv_rows(const MetricReport& r) {
  std::vector<std::string> rows;
  rows.push_back("all,," + std::to_string(r.samples) + "," + fmt(r.fid) + "," + fmt(r.perceptual) + "," +
                 fmt(r.idr) + "," + fmt(r.frr) + "," + fmt(r.miou) + "," + fmt(r.accuracy));
  for (const auto& b : r.buckets) {
    rows.push_back("bucket," + fmt(b.rate) + "," + std::to_string(b.samples) + "," + fmt(b.fid) + "," +
                   fmt(b.perceptual) + "," + fmt(b.idr) + "," + fmt(b.frr) + ",,");
  }
  return rows;
}

std::string summary(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "samples " << r.samples << "\n"
     << "FID " << r.fid << "  perceptual " << r.perceptual << "  IDR " << r.idr << "%  FRR " << r.frr << "%\n"
     << "mIoU " << r.miou << "  Acc " << r.accuracy << "\n";
  for (const auto& b : r.buckets) {
    os << "  rate ~" << std::setprecision(0) << b.rate * 100 << std::setprecision(4) << "%: n=" << b.samples
       << "  FID " << b.fid << "  perceptual " << b.perceptual << "  IDR " << b.idr << "%  FRR " << b.frr << "%\n";
  }
  return os.str();
}

SegQuality evaluate_segmentation(model::Generator& generator, perception::StyleEncoder& encoder,
                                 const training::TrainerConfig& config, const data::IdentityCorpus& corpus,
                                 const perception::FaceParser& parser, const perception::IdentityEmbedder& embedder,
                                 int64_t seg_resolution, int64_t batch_size, std::mt19937_64& rng) {
  const auto& res = config.generator.cwsi_resolutions;
  const auto it = std::find(res.begin(), res.end(), seg_resolution);
  if (it == res.end()) {
    throw std::invalid_argument("no segmentation branch at resolution " + std::to_string(seg_resolution));
  }
  const size_t branch = static_cast<size_t>(it - res.begin());
  torch::NoGradGuard no_grad;
  SegConfusion confusion(config.generator.num_classes);

  std::vector<data::SamplePair> pairs;
  auto flush = [&] {
    if (pairs.empty()) return;
    auto in = training::build_mode_inputs(pairs, TrainingMode::Segmentation, config.masks, config.generator.resolution,
                                          parser, embedder, rng);
    auto out = generator->forward(in.corrupted, in.z_id, training::style_matrix(encoder, in));
    auto predicted = out.seg_probs[branch].argmax(1);
    confusion.add(predicted, downsample_labels(in.seg_target, seg_resolution));
    pairs.clear();
  };
  for (const auto& id : corpus.identity_ids) {
    const auto& records = corpus.index.at(id);
    for (size_t k = 0; k < records.size(); ++k) {
      data::SamplePair p;
      p.identity_id = id;
      p.target_index = p.reference_index = static_cast<int64_t>(k);
      p.target = p.reference = records[k].image;
      p.seg_target = p.seg_reference = records[k].seg;
      pairs.push_back(std::move(p));
      if (static_cast<int64_t>(pairs.size()) == batch_size) flush();
    }
  }
  flush();
  return confusion.result();
}

MetricReport evaluate(model::Generator& generator, perception::StyleEncoder& encoder,
                      const training::TrainerConfig& config, const data::IdentityCorpus& corpus,
                      const EvalOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("evaluation corpus is empty");
  generator->eval();
  encoder->eval();
  torch::NoGradGuard no_grad;
  std::mt19937_64 rng(options.seed);
  const auto embedder = perception::make_embedder(config.embedder);
  const auto retrieval = perception::make_embedder(options.retrieval_embedder);
  const auto parser = perception::make_parser(config.parser);
  const auto perceptual = perception::make_perceptual(config.perceptual);

  RetrievalPool pool;
  std::vector<torch::Tensor> pool_embeddings;
  for (const auto& id : corpus.identity_ids) {
    const auto& records = corpus.index.at(id);
    for (size_t k = 2; k < records.size(); ++k) {
      pool.identities.push_back(id);
      pool_embeddings.push_back(retrieval->embed(to_model_range(records[k].image).unsqueeze(0)));
    }
  }
  if (!pool_embeddings.empty()) pool.embeddings = torch::cat(pool_embeddings);

  std::vector<torch::Tensor> real_feats, fake_feats, dists, fake_emb, ref_emb;
  std::vector<std::string> ids;
  std::vector<size_t> bucket_of;

  for (double rate : options.mask_rates) {
    auto masks = config.masks;
    masks.rates = {rate};
    std::vector<data::SamplePair> pairs;
    auto flush = [&] {
      if (pairs.empty()) return;
      auto in = training::build_mode_inputs(pairs, TrainingMode::Inpainting, masks, config.generator.resolution,
                                            *parser, *embedder, rng);
      auto out = generator->forward(in.corrupted, in.z_id, training::style_matrix(encoder, in));
      real_feats.push_back(embedder->features(in.target));
      fake_feats.push_back(embedder->features(out.image));
      dists.push_back(perceptual_distance(out.image, in.target, *perceptual));
      fake_emb.push_back(retrieval->embed(out.image));
      ref_emb.push_back(retrieval->embed(in.reference));
      for (int64_t b = 0; b < in.mask.size(0); ++b) {
        bucket_of.push_back(mask_rate_bucket(1.0 - in.mask[b].mean().item<double>()));
      }
      ids.insert(ids.end(), in.identities.begin(), in.identities.end());
      pairs.clear();
    };
    for (const auto& id : corpus.identity_ids) {
      const auto& records = corpus.index.at(id);
      data::SamplePair p;
      p.identity_id = id;
      p.target_index = 0;
      p.reference_index = 1;
      p.target = records[0].image;
      p.reference = records[1].image;
      p.seg_target = records[0].seg;
      p.seg_reference = records[1].seg;
      pairs.push_back(std::move(p));
      if (static_cast<int64_t>(pairs.size()) == options.batch_size) flush();
    }
    flush();
  }

  const auto real = torch::cat(real_feats), fake = torch::cat(fake_feats), dist = torch::cat(dists);
  const auto gen_e = torch::cat(fake_emb), ref_e = torch::cat(ref_emb);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto score = [&](const torch::Tensor& sel, const std::vector<std::string>& sel_ids, auto& out) {
    const int64_t n = sel.size(0);
    out.fid = n >= 2 ? fid(feature_stats(real.index_select(0, sel)), feature_stats(fake.index_select(0, sel))) : nan;
    out.perceptual = n ? dist.index_select(0, sel).mean().item<double>() : nan;
    out.idr = pool.identities.empty() || !n ? nan : idr(gen_e.index_select(0, sel), sel_ids, pool);
    out.frr = n ? frr(gen_e.index_select(0, sel), ref_e.index_select(0, sel)) : nan;
  };

  MetricReport report;
  report.samples = real.size(0);
  score(torch::arange(report.samples), ids, report);
  for (size_t k = 0; k < kMaskRateBuckets.size(); ++k) {
    std::vector<int64_t> members;
    std::vector<std::string> member_ids;
    for (size_t i = 0; i < bucket_of.size(); ++i) {
      if (bucket_of[i] == k) {
        members.push_back(static_cast<int64_t>(i));
        member_ids.push_back(ids[i]);
      }
    }
    BucketReport b;
    b.rate = kMaskRateBuckets[k];
    b.samples = static_cast<int64_t>(members.size());
    score(torch::tensor(members, torch::kInt64), member_ids, b);
    report.buckets.push_back(b);
  }

  auto seg = evaluate_segmentation(generator, encoder, config, corpus, *parser, *embedder, options.seg_resolution,
                                   options.batch_size, rng);
  report.miou = seg.miou;
  report.accuracy = seg.accuracy;
  return report;
}

}  // namespace refface::evaluation
