#include "refface/trainer.hpp"

#include <cmath>
#include <sstream>

namespace fs = std::filesystem;

namespace refface::training {
namespace {

constexpr int64_t kCheckpointVersion = 1;

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const OptimizerConfig& c) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(c.learning_rate).betas({c.beta1, c.beta2}));
}

int64_t scaled(double px_at_256, int64_t resolution) {
  return std::lround(px_at_256 * static_cast<double>(resolution) / 256.0);
}

bool finite(double x) { return std::isfinite(x); }

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void write_string(torch::serialize::OutputArchive& archive, const std::string& key, const std::string& value) {
  archive.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
  c10::IValue value;
  archive.read(key, value);
  return value.toStringRef();
}

// Model-shaping parts of the configuration; a checkpoint only loads into a
// trainer that agrees on all of them.
nlohmann::json model_signature(const TrainerConfig& c) {
  auto j = to_json(c);
  return {{"generator", j["generator"]}, {"style_encoder", j["style_encoder"]}, {"discriminators", j["discriminators"]}};
}

}  // namespace

TrainingMode tmt_schedule(int64_t step, bool single_mode) {
  if (step < 0) throw std::invalid_argument("step must be non-negative");
  if (single_mode) return TrainingMode::Inpainting;
  switch (step % 4) {
    case 1:
      return TrainingMode::Segmentation;
    case 3:
      return TrainingMode::StyleExtracting;
    default:
      return TrainingMode::Inpainting;
  }
}

Trainer::Trainer(TrainerConfig config, std::shared_ptr<const data::IdentityCorpus> corpus)
    : config_(std::move(config)), corpus_(std::move(corpus)), rng_(config_.seed) {
  config_.generator.validate();
  if (config_.style_encoder.widths.back() != config_.generator.style_dim) {
    throw ConfigError("style encoder output width must equal the generator style_dim");
  }
  if (config_.optimizer.batch_size <= 0) throw ConfigError("optimizer.batch_size must be positive");
  for (double rate : config_.masks.rates) {
    auto spec = config_.masks.free_form;
    spec.coverage = rate;
    spec.validate();
  }

  torch::manual_seed(config_.seed);
  generator_ = model::Generator(config_.generator);
  style_encoder_ = perception::StyleEncoder(config_.style_encoder);
  global_disc_ = adversaries::PatchDiscriminator(config_.discriminators.global_widths);
  local_discs_ = adversaries::LocalDiscriminators(config_.generator.resolution, config_.discriminators.local_widths);

  embedder_ = perception::make_embedder(config_.embedder);
  parser_ = perception::make_parser(config_.parser);
  perceptual_ = perception::make_perceptual(config_.perceptual);

  opt_generator_ = make_adam(generator_->parameters(), config_.optimizer);
  opt_style_ = make_adam(style_encoder_->parameters(), config_.optimizer);
  opt_global_ = make_adam(global_disc_->parameters(), config_.optimizer);
  opt_local_ = make_adam(local_discs_->parameters(), config_.optimizer);
}

ModeInputs build_mode_inputs(const std::vector<data::SamplePair>& pairs, TrainingMode mode, const MaskConfig& masks,
                             int64_t resolution, const perception::FaceParser& parser,
                             const perception::IdentityEmbedder& embedder, std::mt19937_64& rng) {
  if (pairs.empty()) throw std::invalid_argument("build_mode_inputs needs at least one pair");
  const int64_t R = resolution;
  ModeInputs in;
  in.mode = mode;
  std::vector<torch::Tensor> targets, refs, mask_values, seg_t, seg_r;
  for (const auto& pair : pairs) {
    if (pair.target.size(1) != R || pair.target.size(2) != R) {
      throw std::invalid_argument("sample resolution does not match the generator resolution");
    }
    const SegMap st = pair.seg_target ? *pair.seg_target : parser.parse(pair.target);
    const bool same = mode != TrainingMode::Inpainting;
    const torch::Tensor& reference = same ? pair.target : pair.reference;
    const SegMap sr = same ? st : (pair.seg_reference ? *pair.seg_reference : parser.parse(pair.reference));

    Mask mask;
    switch (mode) {
      case TrainingMode::Inpainting: {
        auto spec = masks.free_form;
        std::uniform_int_distribution<size_t> pick(0, masks.rates.size() - 1);
        spec.coverage = masks.rates[pick(rng)];
        mask = masking::free_form_mask(spec, R, rng);
        break;
      }
      case TrainingMode::Segmentation:
        mask = masking::segmentation_mode_mask(st, rng, masks.segmentation);
        break;
      case TrainingMode::StyleExtracting:
        mask = masking::style_extracting_mask(st, scaled(masks.style_dilation_256, R));
        break;
    }
    targets.push_back(to_model_range(pair.target));
    refs.push_back(to_model_range(reference));
    mask_values.push_back(mask.values);
    seg_t.push_back(st.labels);
    seg_r.push_back(sr.labels);
    in.identities.push_back(pair.identity_id);
  }
  in.target = torch::stack(targets);
  in.reference = torch::stack(refs);
  in.mask = torch::stack(mask_values);
  in.seg_target = torch::stack(seg_t);
  in.seg_reference = torch::stack(seg_r);
  in.corrupted = masking::compose_corrupted(in.target, in.mask);
  in.visible = perception::visible_components(in.seg_target, in.mask);
  {
    torch::NoGradGuard no_grad;
    in.z_id = embedder.embed(in.reference);
  }
  return in;
}

torch::Tensor style_matrix(perception::StyleEncoder& encoder, const ModeInputs& inputs) {
  if (inputs.mode == TrainingMode::StyleExtracting) {
    return perception::extract_style_matrix(encoder, inputs.reference, inputs.seg_reference, inputs.visible);
  }
  torch::NoGradGuard no_grad;
  return perception::extract_style_matrix(encoder, inputs.reference, inputs.seg_reference, inputs.visible);
}

ModeInputs Trainer::build_mode_inputs(const std::vector<data::SamplePair>& pairs, TrainingMode mode,
                                      std::mt19937_64& rng) const {
  return training::build_mode_inputs(pairs, mode, config_.masks, config_.generator.resolution, *parser_, *embedder_,
                                     rng);
}

ModeInputs Trainer::sample_inputs(TrainingMode mode) {
  if (!corpus_) throw std::logic_error("trainer has no corpus to sample from");
  std::vector<data::SamplePair> pairs;
  for (int64_t b = 0; b < config_.optimizer.batch_size; ++b) pairs.push_back(data::sample_pair(*corpus_, mode, rng_));
  return build_mode_inputs(pairs, mode, rng_);
}

model::GeneratorOutput Trainer::generate(const ModeInputs& inputs) {
  return generator_->forward(inputs.corrupted, inputs.z_id, style_matrix(style_encoder_, inputs));
}

StepRecord Trainer::train_step(const ModeInputs& in) {
  namespace obj = objectives;
  StepRecord record;
  record.step = step_;
  record.mode = in.mode;
  const bool inpainting = in.mode == TrainingMode::Inpainting;

  generator_->train();
  style_encoder_->train();
  global_disc_->train();
  local_discs_->train();

  auto out = generate(in);
  const auto boxes = adversaries::crop_boxes(in.seg_target);

  // Discriminator update.
  opt_global_->zero_grad();
  opt_local_->zero_grad();
  auto fake = out.image.detach();
  auto d_global = obj::adv_hinge_d(global_disc_->forward(in.target), global_disc_->forward(fake));
  auto d_loss = d_global;
  torch::Tensor d_local;
  if (inpainting) {
    auto real_crops = adversaries::apply_crops(in.target, boxes);
    auto fake_crops = adversaries::apply_crops(fake, boxes);
    std::array<torch::Tensor, 3> real_scores, fake_scores;
    for (size_t r = 0; r < 3; ++r) {
      real_scores[r] = local_discs_->forward(real_crops[r], adversaries::kRegions[r]);
      fake_scores[r] = local_discs_->forward(fake_crops[r], adversaries::kRegions[r]);
    }
    d_local = obj::local_adv_d(real_scores, fake_scores);
    d_loss = d_loss + d_local;
  }
  record.d_global = d_global.item<double>();
  record.d_local = d_local.defined() ? d_local.item<double>() : 0.0;

  // Generator objective.
  obj::LossTerms terms;
  terms.reconstruction = obj::recon_l1(out.image, in.target);
  terms.perceptual = obj::perceptual_loss(out.image, in.target, *perceptual_);
  terms.identity = obj::identity_loss(out.image, in.reference, *embedder_);
  terms.segmentation = obj::segmentation_loss(out.seg_probs, in.seg_target);

  const bool d_finite = finite(d_loss.item<double>());
  if (d_finite) {
    d_loss.backward();
    opt_global_->step();
    record.updated_groups.push_back("global_disc");
    if (inpainting) {
      opt_local_->step();
      record.updated_groups.push_back("local_discs");
    }
  }

  // Adversarial generator terms see the freshly updated discriminators.
  terms.adv_global = obj::adv_hinge_g(global_disc_->forward(out.image));
  if (inpainting) {
    auto fake_crops = adversaries::apply_crops(out.image, boxes);
    std::array<torch::Tensor, 3> scores;
    for (size_t r = 0; r < 3; ++r) scores[r] = local_discs_->forward(fake_crops[r], adversaries::kRegions[r]);
    terms.adv_local = obj::local_adv_g(scores);
  }
  auto total = obj::total_loss(terms, in.mode, config_.weights);
  record.losses = total.report;

  opt_generator_->zero_grad();
  opt_style_->zero_grad();
  const bool g_finite = finite(total.report.total);
  if (g_finite) {
    total.total.backward();
    opt_generator_->step();
    record.updated_groups.push_back("generator");
    if (in.mode == TrainingMode::StyleExtracting) {
      opt_style_->step();
      record.updated_groups.push_back("style_encoder");
    }
  }
  // Generator backward also reaches the discriminators; those gradients are
  // discarded before their next update.
  opt_global_->zero_grad();
  opt_local_->zero_grad();

  record.finite = d_finite && g_finite;
  consecutive_nonfinite_ = record.finite ? 0 : consecutive_nonfinite_ + 1;
  ++step_;
  if (consecutive_nonfinite_ >= config_.nonfinite_limit) {
    throw TrainingHalted("training halted after " + std::to_string(consecutive_nonfinite_) +
                         " consecutive non-finite steps (last step " + std::to_string(record.step) + ")");
  }
  return record;
}

StepRecord Trainer::step() {
  const auto mode = tmt_schedule(step_, config_.single_mode);
  return train_step(sample_inputs(mode));
}

void Trainer::save_checkpoint(const fs::path& path) const {
  torch::serialize::OutputArchive archive;
  archive.write("version", c10::IValue(kCheckpointVersion));
  write_string(archive, "config", to_json(config_).dump());
  archive.write("step", c10::IValue(step_));
  write_string(archive, "rng", rng_state(rng_));

  auto save_module = [&](const std::string& key, const torch::nn::Module& module) {
    torch::serialize::OutputArchive nested;
    module.save(nested);
    archive.write(key, nested);
  };
  save_module("generator", *generator_);
  save_module("style_encoder", *style_encoder_);
  save_module("global_disc", *global_disc_);
  save_module("local_discs", *local_discs_);

  auto save_optimizer = [&](const std::string& key, const torch::optim::Optimizer& opt) {
    torch::serialize::OutputArchive nested;
    opt.save(nested);
    archive.write(key, nested);
  };
  save_optimizer("opt_generator", *opt_generator_);
  save_optimizer("opt_style", *opt_style_);
  save_optimizer("opt_global", *opt_global_);
  save_optimizer("opt_local", *opt_local_);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  archive.save_to(path.string());
}

void Trainer::load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw AssetError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());

  c10::IValue version;
  archive.read("version", version);
  if (version.toInt() != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version.toInt()) + " is not supported");
  }
  const auto stored = trainer_config_from_json(nlohmann::json::parse(read_string(archive, "config")));
  if (model_signature(stored) != model_signature(config_)) {
    throw ConfigError("checkpoint model configuration does not match: stored " + model_signature(stored).dump() +
                      ", current " + model_signature(config_).dump());
  }

  auto load_module = [&](const std::string& key, torch::nn::Module& module) {
    torch::serialize::InputArchive nested;
    archive.read(key, nested);
    module.load(nested);
  };
  load_module("generator", *generator_);
  load_module("style_encoder", *style_encoder_);
  load_module("global_disc", *global_disc_);
  load_module("local_discs", *local_discs_);

  auto load_optimizer = [&](const std::string& key, torch::optim::Optimizer& opt) {
    torch::serialize::InputArchive nested;
    archive.read(key, nested);
    opt.load(nested);
  };
  load_optimizer("opt_generator", *opt_generator_);
  load_optimizer("opt_style", *opt_style_);
  load_optimizer("opt_global", *opt_global_);
  load_optimizer("opt_local", *opt_local_);

  c10::IValue step;
  archive.read("step", step);
  step_ = step.toInt();
  std::istringstream is(read_string(archive, "rng"));
  is >> rng_;
}

InferenceModel load_inference_model(const fs::path& path) {
  if (!fs::exists(path)) throw AssetError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue version, step;
  archive.read("version", version);
  if (version.toInt() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");

  InferenceModel m;
  m.config = trainer_config_from_json(nlohmann::json::parse(read_string(archive, "config")));
  m.generator = model::Generator(m.config.generator);
  m.style_encoder = perception::StyleEncoder(m.config.style_encoder);
  torch::serialize::InputArchive g, s;
  archive.read("generator", g);
  m.generator->load(g);
  archive.read("style_encoder", s);
  m.style_encoder->load(s);
  archive.read("step", step);
  m.step = step.toInt();
  m.generator->eval();
  m.style_encoder->eval();
  return m;
}

torch::Tensor sample_grid(const ModeInputs& inputs, const torch::Tensor& output) {
  std::vector<torch::Tensor> rows;
  for (int64_t b = 0; b < inputs.target.size(0); ++b) {
    auto corrupted = inputs.corrupted[b].narrow(0, 0, 3);
    rows.push_back(torch::cat({inputs.target[b], corrupted, inputs.reference[b], output[b].detach()}, 2));
  }
  return to_rgb8(torch::cat(rows, 1));
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
  return out;
}

bool bitwise_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].sizes().equals(b[i].sizes()) || !torch::equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace refface::training
