#include "refface/perception.hpp"

#include <map>
#include <mutex>
#include <random>
#include <tuple>

#include <Eigen/Dense>

#include "refface/data.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace refface::perception {
namespace {

struct ConvLayer {
  torch::Tensor weight, bias;
  int64_t stride = 1;
};

ConvLayer random_conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, at::Generator& gen) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  return ConvLayer{torch::randn({out, in, kernel, kernel}, gen, torch::kFloat32) * scale,
                   torch::randn({out}, gen, torch::kFloat32) * 0.05, stride};
}

torch::Tensor apply(const ConvLayer& layer, const torch::Tensor& x) {
  return F::conv2d(x, layer.weight,
                   F::Conv2dFuncOptions().bias(layer.bias).stride(layer.stride).padding(layer.weight.size(-1) / 2));
}

torch::Tensor resize_to(const torch::Tensor& images, int64_t size) {
  if (images.size(-1) == size && images.size(-2) == size) return images;
  return F::interpolate(images, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{size, size})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

torch::jit::Module load_script(const std::optional<fs::path>& asset, const std::string& what) {
  if (!asset) throw AssetError(what + " backend 'torchscript' needs an asset path");
  if (!fs::exists(*asset)) throw AssetError(what + " asset not found: " + asset->string());
  try {
    auto module = torch::jit::load(asset->string());
    module.eval();
    for (auto p : module.parameters()) p.set_requires_grad(false);
    return module;
  } catch (const c10::Error& e) {
    throw AssetError(what + " asset " + asset->string() + " could not be loaded: " + e.what_without_backtrace());
  }
}

// Two architecturally distinct frozen trunks. Pooled trunk features are
// projected with a discriminant basis fitted on procedurally rendered toy
// identities, then lifted to 512 dimensions with a fixed orthonormal map.
class ToyEmbedder final : public IdentityEmbedder {
 public:
  ToyEmbedder(bool alternate, int64_t input_size, uint64_t seed) : alternate_(alternate), input_size_(input_size) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    if (!alternate_) {
      trunk_ = {random_conv(3, 32, 3, 1, gen), random_conv(32, 48, 3, 2, gen), random_conv(48, 64, 3, 2, gen)};
    } else {
      trunk_ = {random_conv(3, 24, 5, 2, gen), random_conv(24, 48, 3, 2, gen), random_conv(48, 64, 3, 2, gen)};
    }
    // The fit depends only on (backend, input size, seed); reuse it within a process.
    static std::mutex mutex;
    static std::map<std::tuple<bool, int64_t, uint64_t>, std::pair<torch::Tensor, torch::Tensor>> fitted;
    {
      std::lock_guard<std::mutex> lock(mutex);
      const auto key = std::make_tuple(alternate_, input_size_, seed);
      auto it = fitted.find(key);
      if (it == fitted.end()) {
        fit(seed);
        fitted.emplace(key, std::make_pair(mean_, basis_));
      } else {
        mean_ = it->second.first;
        basis_ = it->second.second;
      }
    }
    auto gaussian = torch::randn({kIdentityDim, basis_.size(1)}, gen, torch::kFloat32);
    lift_ = std::get<0>(torch::linalg_qr(gaussian));  // orthonormal columns [512, k]
  }

  torch::Tensor embed(const torch::Tensor& images) const override {
    return F::normalize(torch::matmul(features(images), lift_.t()), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  }

  torch::Tensor features(const torch::Tensor& images) const override {
    return torch::matmul(pooled(images) - mean_, basis_);
  }

  EmbedderInfo info() const override {
    return EmbedderInfo{alternate_ ? "toy_alt" : "toy", input_size_, kIdentityDim};
  }

  std::vector<torch::Tensor> state() const override {
    std::vector<torch::Tensor> s{mean_, basis_, lift_};
    for (const auto& l : trunk_) {
      s.push_back(l.weight);
      s.push_back(l.bias);
    }
    return s;
  }

 private:
  // Central half of the frame (the aligned face), resized to the input size.
  torch::Tensor pooled(const torch::Tensor& images) const {
    const int64_t H = images.size(2), W = images.size(3);
    auto x = resize_to(images.narrow(2, H / 4, H / 2).narrow(3, W / 4, W / 2), input_size_);
    for (const auto& layer : trunk_) x = torch::relu(apply(layer, x));
    auto mean = x.mean({2, 3});
    auto std = (x - x.mean({2, 3}, true)).pow(2).mean({2, 3}).add(1e-6).sqrt();
    if (!alternate_) return torch::cat({mean, std}, 1);
    return torch::cat({mean, std, F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(2)).flatten(1)}, 1);
  }

  void fit(uint64_t seed) {
    constexpr int kIdentities = 192, kRenders = 4;
    std::mt19937_64 rng(seed ^ 0x5eedf17ULL);
    std::vector<torch::Tensor> batch;
    for (int i = 0; i < kIdentities; ++i) {
      data::ToyFaceSpec spec;
      spec.identity = data::sample_toy_identity(rng);
      spec.resolution = 128;
      for (int r = 0; r < kRenders; ++r) {
        spec.pose = data::sample_pose(rng, 1.0);
        spec.seed = rng();
        auto face = data::generate_toy_face(spec);
        batch.push_back(to_model_range(face.image));
      }
    }
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> chunks;
    for (size_t i = 0; i < batch.size(); i += 128) {
      const auto end = std::min(batch.size(), i + 128);
      chunks.push_back(pooled(torch::stack(std::vector<torch::Tensor>(batch.begin() + i, batch.begin() + end))));
    }
    auto feats = torch::cat(chunks).to(torch::kFloat64).contiguous();
    const int64_t n = feats.size(0), d = feats.size(1);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(feats.data_ptr<double>(), n, d);

    Eigen::RowVectorXd mu = X.colwise().mean();
    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d), between = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < kIdentities; ++i) {
      auto block = X.middleRows(i * kRenders, kRenders);
      Eigen::RowVectorXd mc = block.colwise().mean();
      Eigen::MatrixXd centered = block.rowwise() - mc;
      within += centered.transpose() * centered;
      Eigen::RowVectorXd diff = mc - mu;
      between += kRenders * diff.transpose() * diff;
    }
    within /= static_cast<double>(n);
    between /= static_cast<double>(n);
    within += (0.1 * within.trace() / static_cast<double>(d) + 1e-9) * Eigen::MatrixXd::Identity(d, d);

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(between, within);
    const int64_t k = std::min<int64_t>({kIdentities - 1, d, 32});
    Eigen::MatrixXd basis = solver.eigenvectors().rightCols(k);  // largest eigenvalues

    mean_ = torch::from_blob(mu.data(), {d}, torch::kFloat64).clone().to(torch::kFloat32);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis_rm = basis;
    basis_ = torch::from_blob(basis_rm.data(), {d, k}, torch::kFloat64).clone().to(torch::kFloat32);
  }

  bool alternate_;
  int64_t input_size_;
  std::vector<ConvLayer> trunk_;
  torch::Tensor mean_, basis_, lift_;
};

class ScriptEmbedder final : public IdentityEmbedder {
 public:
  ScriptEmbedder(const EmbedderConfig& config)
      : module_(load_script(config.asset, "identity embedder")), input_size_(config.input_size) {}

  torch::Tensor embed(const torch::Tensor& images) const override {
    auto z = features(images);
    if (z.size(1) != kIdentityDim) {
      throw AssetError("identity embedder produced " + std::to_string(z.size(1)) + " dims, expected 512");
    }
    return F::normalize(z, F::NormalizeFuncOptions().dim(1).eps(1e-12));
  }

  torch::Tensor features(const torch::Tensor& images) const override {
    auto& module = const_cast<torch::jit::Module&>(module_);
    return module.forward({resize_to(images, input_size_)}).toTensor();
  }

  EmbedderInfo info() const override { return EmbedderInfo{"torchscript", input_size_, kIdentityDim}; }

  std::vector<torch::Tensor> state() const override {
    std::vector<torch::Tensor> s;
    for (const auto& p : module_.parameters()) s.push_back(p);
    return s;
  }

 private:
  torch::jit::Module module_;
  int64_t input_size_;
};

class ToyParser final : public FaceParser {
 public:
  SegMap parse(const torch::Tensor& rgb8) const override {
    auto labels = torch::bitwise_and(rgb8[2].to(torch::kInt64), 7);
    labels.masked_fill_(labels >= seg_class::kCount, seg_class::kBackground);
    return SegMap{labels.contiguous(), seg_class::kCount};
  }
  std::string backend() const override { return "toy"; }
};

class ScriptParser final : public FaceParser {
 public:
  explicit ScriptParser(const ParserConfig& config)
      : module_(load_script(config.asset, "face parser")),
        lookup_(torch::tensor(config.class_lookup, torch::kInt64)) {
    for (int64_t cls : kComponentClasses) {
      if (!(lookup_ == cls).any().item<bool>()) {
        throw ConfigError("face parser class lookup does not map any class onto component " + std::to_string(cls));
      }
    }
  }

  SegMap parse(const torch::Tensor& rgb8) const override {
    torch::NoGradGuard no_grad;
    auto& module = const_cast<torch::jit::Module&>(module_);
    auto logits = module.forward({to_model_range(rgb8).unsqueeze(0)}).toTensor();
    auto raw = logits.argmax(1).squeeze(0);
    if (raw.max().item<int64_t>() >= lookup_.size(0)) throw AssetError("face parser emitted an unmapped class");
    return SegMap{lookup_.index({raw}).contiguous(), seg_class::kCount};
  }
  std::string backend() const override { return "torchscript"; }

 private:
  torch::jit::Module module_;
  torch::Tensor lookup_;
};

class ToyPerceptual final : public PerceptualNet {
 public:
  ToyPerceptual(int64_t layers, uint64_t seed) {
    if (layers < 1 || layers > 5) throw ConfigError("toy perceptual backbone has 1..5 layers");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const int64_t widths[] = {16, 32, 48, 64, 64};
    int64_t in = 3;
    for (int64_t i = 0; i < layers; ++i) {
      stages_.push_back(random_conv(in, widths[i], 3, i == 0 ? 1 : 2, gen));
      in = widths[i];
    }
  }

  std::vector<torch::Tensor> features(const torch::Tensor& images) const override {
    std::vector<torch::Tensor> out;
    auto x = images;
    for (const auto& s : stages_) {
      x = torch::relu(apply(s, x));
      out.push_back(x);
    }
    return out;
  }
  int64_t layer_count() const override { return static_cast<int64_t>(stages_.size()); }

 private:
  std::vector<ConvLayer> stages_;
};

class ScriptPerceptual final : public PerceptualNet {
 public:
  explicit ScriptPerceptual(const PerceptualConfig& config)
      : module_(load_script(config.asset, "perceptual network")), layers_(config.layers) {}

  std::vector<torch::Tensor> features(const torch::Tensor& images) const override {
    auto& module = const_cast<torch::jit::Module&>(module_);
    auto result = module.forward({images});
    std::vector<torch::Tensor> out;
    if (result.isTuple()) {
      for (const auto& v : result.toTupleRef().elements()) out.push_back(v.toTensor());
    } else {
      for (const auto& v : result.toList()) out.push_back(v.get().toTensor());
    }
    if (static_cast<int64_t>(out.size()) != layers_) {
      throw AssetError("perceptual network returned " + std::to_string(out.size()) + " layers, expected " +
                       std::to_string(layers_));
    }
    return out;
  }
  int64_t layer_count() const override { return layers_; }

 private:
  torch::jit::Module module_;
  int64_t layers_;
};

}  // namespace

std::unique_ptr<IdentityEmbedder> make_embedder(const EmbedderConfig& config) {
  if (config.backend == "toy") return std::make_unique<ToyEmbedder>(false, config.input_size, config.seed);
  if (config.backend == "toy_alt") return std::make_unique<ToyEmbedder>(true, config.input_size, config.seed);
  if (config.backend == "torchscript") return std::make_unique<ScriptEmbedder>(config);
  throw ConfigError("unknown identity embedder backend '" + config.backend + "'");
}

std::unique_ptr<FaceParser> make_parser(const ParserConfig& config) {
  if (config.backend == "toy") return std::make_unique<ToyParser>();
  if (config.backend == "torchscript") return std::make_unique<ScriptParser>(config);
  throw ConfigError("unknown face parser backend '" + config.backend + "'");
}

std::unique_ptr<PerceptualNet> make_perceptual(const PerceptualConfig& config) {
  if (config.backend == "toy") return std::make_unique<ToyPerceptual>(config.layers, config.seed);
  if (config.backend == "torchscript") return std::make_unique<ScriptPerceptual>(config);
  throw ConfigError("unknown perceptual backend '" + config.backend + "'");
}

// ---------------------------------------------------------------------------

StyleEncoderImpl::StyleEncoderImpl(StyleEncoderConfig config) : config_(std::move(config)) {
  if (config_.widths.size() != 4) throw ConfigError("style encoder has exactly four stride-2 stages");
  body = nn::Sequential();
  int64_t in = 3;
  for (size_t i = 0; i < config_.widths.size(); ++i) {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, config_.widths[i], 3).stride(2).padding(1)));
    if (i + 1 < config_.widths.size()) body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = config_.widths[i];
  }
  body->push_back(nn::Tanh());
  register_module("body", body);
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& images) { return body->forward(images); }

torch::Tensor region_pool(const torch::Tensor& features, const torch::Tensor& labels) {
  const int64_t B = features.size(0), D = features.size(1), h = features.size(2), w = features.size(3);
  const int64_t H = labels.size(1), W = labels.size(2);
  if (labels.size(0) != B || H % h != 0 || W % w != 0) {
    throw std::invalid_argument("region_pool: label map must be an integer multiple of the feature map");
  }
  std::vector<torch::Tensor> regions;
  for (int64_t cls : kComponentClasses) regions.push_back((labels == cls).to(features.dtype()));
  auto weights = torch::stack(regions, 1);  // [B, 5, H, W]
  if (H != h || W != w) {
    weights = F::avg_pool2d(weights, F::AvgPool2dFuncOptions({H / h, W / w}));
  }
  auto num = torch::bmm(weights.reshape({B, kNumComponents, h * w}), features.reshape({B, D, h * w}).transpose(1, 2));
  auto den = weights.sum({2, 3}).unsqueeze(-1);
  auto codes = num / den.clamp_min(1e-12);
  return codes.masked_fill(den == 0, 0.0);
}

torch::Tensor visible_components(const torch::Tensor& target_labels, const torch::Tensor& mask) {
  auto known = mask > 0.5;
  std::vector<torch::Tensor> visible;
  for (int64_t cls : kComponentClasses) {
    visible.push_back(torch::logical_and(target_labels == cls, known).flatten(1).any(1));
  }
  return torch::stack(visible, 1);
}

torch::Tensor style_matrix_from_features(const torch::Tensor& features, const torch::Tensor& reference_labels,
                                         const torch::Tensor& visible) {
  return region_pool(features, reference_labels).masked_fill(visible.unsqueeze(-1), 0.0);
}

torch::Tensor extract_style_matrix(StyleEncoder& encoder, const torch::Tensor& reference,
                                   const torch::Tensor& reference_labels, const torch::Tensor& visible) {
  return style_matrix_from_features(encoder->forward(reference), reference_labels, visible);
}

}  // namespace refface::perception
