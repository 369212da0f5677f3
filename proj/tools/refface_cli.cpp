// refface-cli: dataset and mask generation, training, inference, evaluation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "refface/config.hpp"
#include "refface/data.hpp"
#include "refface/evaluation.hpp"
#include "refface/image_io.hpp"
#include "refface/masking.hpp"
#include "refface/perception.hpp"
#include "refface/trainer.hpp"

namespace fs = std::filesystem;
using namespace refface;

namespace {

std::string step_name(int64_t step) {
  std::ostringstream os;
  os << "step_" << std::setw(7) << std::setfill('0') << step;
  return os.str();
}

torch::Tensor load_image(const fs::path& path, int64_t resolution) {
  auto rgb = io::read_rgb(path);
  if (!rgb) throw AssetError("cannot read image " + path.string());
  return rgb->size(1) == resolution && rgb->size(2) == resolution ? *rgb : io::resize_rgb(*rgb, resolution);
}

// ---------------------------------------------------------------------------

struct MakeDatasetArgs {
  fs::path output;
  data::ToyCorpusOptions options;
};

int make_dataset(const MakeDatasetArgs& a, uint64_t seed) {
  auto options = a.options;
  options.seed = seed;
  const auto root = data::write_toy_corpus(a.output, options);
  std::cout << "wrote " << options.identities << " identities x " << options.renders_per_identity << " renders to "
            << root << "\n";
  return 0;
}

struct MakeMasksArgs {
  fs::path output;
  int64_t count = 100;
  double rate = 0.2;
  int64_t resolution = 256;
};

int make_masks(const MakeMasksArgs& a, uint64_t seed) {
  masking::MaskSpec spec;
  spec.coverage = a.rate;
  spec.seed = seed;
  spec.validate();
  std::mt19937_64 rng(seed);
  fs::create_directories(a.output);
  double missing = 0;
  for (int64_t i = 0; i < a.count; ++i) {
    const auto mask = masking::free_form_mask(spec, a.resolution, rng);
    missing += mask.missing_fraction();
    std::ostringstream name;
    name << "mask_" << std::setw(5) << std::setfill('0') << i << ".png";
    io::write_mask(a.output / name.str(), mask);
  }
  std::cout << "wrote " << a.count << " masks, mean missing fraction "
            << (a.count ? missing / static_cast<double>(a.count) : 0.0) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> output, dataset;
  bool resume = false;
  bool single_mode = false;
  std::optional<int64_t> max_steps, checkpoint_every, sample_every, batch_size, test_identities;
  std::optional<double> learning_rate;
};

int train(const TrainArgs& a, std::optional<uint64_t> seed) {
  auto run = config::load_run_config(a.config);
  if (a.output) run.output_dir = *a.output;
  if (a.dataset) run.dataset = *a.dataset;
  if (a.max_steps) run.max_steps = *a.max_steps;
  if (a.checkpoint_every) run.checkpoint_every = *a.checkpoint_every;
  if (a.sample_every) run.sample_every = *a.sample_every;
  if (a.test_identities) run.test_identities = *a.test_identities;
  if (a.batch_size) run.trainer.optimizer.batch_size = *a.batch_size;
  if (a.learning_rate) run.trainer.optimizer.learning_rate = *a.learning_rate;
  if (a.single_mode) run.trainer.single_mode = true;
  if (seed) run.trainer.seed = *seed;
  run.validate();

  const int64_t R = run.trainer.generator.resolution;
  auto full = data::load_identity_corpus(run.dataset, R);
  auto [train_set, test_set] = data::split_corpus(full, run.test_identities);
  if (train_set.empty()) throw ConfigError("config field 'dataset' has no usable training identities");
  std::cout << "training on " << train_set.identity_ids.size() << " identities (" << train_set.image_count()
            << " images), holding out " << test_set.identity_ids.size() << "\n";

  fs::create_directories(run.output_dir / "checkpoints");
  fs::create_directories(run.output_dir / "samples");
  config::save_run_config(run.output_dir / "config.json", run);

  const auto corpus = std::make_shared<const data::IdentityCorpus>(std::move(train_set));
  training::Trainer trainer(run.trainer, corpus);
  const auto latest = run.output_dir / "checkpoints" / "latest.pt";
  if (a.resume) {
    trainer.load_checkpoint(latest);
    std::cout << "resumed at step " << trainer.step_count() << "\n";
  }

  int64_t total_steps = run.max_steps;
  if (total_steps == 0) {
    const int64_t batch = run.trainer.optimizer.batch_size;
    total_steps = run.trainer.optimizer.epochs * ((corpus->image_count() + batch - 1) / batch);
  }

  const auto metrics_path = run.output_dir / "metrics.csv";
  const bool append = a.resume && fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!append) {
    metrics << "step,mode,total,reconstruction,perceptual,identity,segmentation,adv_global,adv_local,d_global,"
               "d_local,finite\n";
  }

  // Sample grids draw from their own stream so they do not shift training.
  std::mt19937_64 sample_rng(run.trainer.seed + 1);
  auto save = [&](int64_t step) {
    trainer.save_checkpoint(run.output_dir / "checkpoints" / (step_name(step) + ".pt"));
    trainer.save_checkpoint(latest);
  };
  try {
    while (trainer.step_count() < total_steps) {
      const auto r = trainer.step();
      const auto& l = r.losses;
      metrics << r.step << "," << to_string(r.mode) << "," << l.total << "," << l.reconstruction << ","
              << l.perceptual << "," << l.identity << "," << l.segmentation << "," << l.adv_global << ","
              << l.adv_local << "," << r.d_global << "," << r.d_local << "," << (r.finite ? 1 : 0) << "\n";
      const int64_t done = trainer.step_count();
      if (done % run.sample_every == 0) {
        std::vector<data::SamplePair> pairs;
        for (int i = 0; i < 4; ++i) pairs.push_back(data::sample_pair(*corpus, TrainingMode::Inpainting, sample_rng));
        auto in = trainer.build_mode_inputs(pairs, TrainingMode::Inpainting, sample_rng);
        torch::NoGradGuard no_grad;
        trainer.generator()->eval();
        auto grid = training::sample_grid(in, trainer.generate(in).image);
        io::write_rgb(run.output_dir / "samples" / (step_name(done) + ".png"), grid);
      }
      if (done % run.checkpoint_every == 0) {
        metrics.flush();
        save(done);
      }
      if (done % 50 == 0 || done == total_steps) {
        std::cout << "step " << done << "/" << total_steps << " total " << l.total << " rec "
                  << l.reconstruction << "\n"
                  << std::flush;
      }
    }
  } catch (const training::TrainingHalted& e) {
    metrics.flush();
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  save(trainer.step_count());
  std::cout << "finished at step " << trainer.step_count() << "; outputs in " << run.output_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  fs::path checkpoint, image, mask, reference, output;
  std::optional<fs::path> texture_reference;
};

int infer(const InferArgs& a, std::optional<uint64_t> seed) {
  if (seed) torch::manual_seed(*seed);
  for (const auto& p : {a.checkpoint, a.image, a.mask, a.reference}) {
    if (!fs::exists(p)) throw AssetError("input file not found: " + p.string());
  }
  if (a.texture_reference && !fs::exists(*a.texture_reference)) {
    throw AssetError("input file not found: " + a.texture_reference->string());
  }
  auto m = training::load_inference_model(a.checkpoint);
  const int64_t R = m.config.generator.resolution;
  const auto embedder = perception::make_embedder(m.config.embedder);
  const auto parser = perception::make_parser(m.config.parser);

  const auto image8 = load_image(a.image, R);
  const auto mask = io::read_mask(a.mask, R).values;
  const auto identity8 = load_image(a.reference, R);
  const auto texture8 = a.texture_reference ? load_image(*a.texture_reference, R) : identity8;

  torch::NoGradGuard no_grad;
  // Known pixels only; the parser sees the holes as background.
  const auto known8 = (image8.to(torch::kFloat32) * mask).to(torch::kUInt8);
  const auto target_labels = parser->parse(known8).labels.unsqueeze(0);
  const auto visible = perception::visible_components(target_labels, mask.unsqueeze(0));
  const auto texture = to_model_range(texture8).unsqueeze(0);
  const auto style = perception::extract_style_matrix(m.style_encoder, texture,
                                                      parser->parse(texture8).labels.unsqueeze(0), visible);
  const auto z_id = embedder->embed(to_model_range(identity8).unsqueeze(0));
  const auto corrupted = masking::compose_corrupted(to_model_range(image8).unsqueeze(0), mask.view({1, 1, R, R}));
  const auto out = m.generator->forward(corrupted, z_id, style);
  io::write_rgb(a.output, to_rgb8(out.image[0]));
  std::cout << "wrote " << a.output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint, dataset;
  std::optional<fs::path> output;
  std::vector<double> rates{0.2, 0.3, 0.4};
  int64_t test_identities = 0;
  std::optional<int64_t> seg_resolution;
  int64_t batch_size = 8;
};

data::IdentityCorpus eval_corpus(const fs::path& dataset, int64_t resolution, int64_t test_identities) {
  auto corpus = data::load_identity_corpus(dataset, resolution);
  if (test_identities > 0) corpus = data::split_corpus(corpus, test_identities).second;
  if (corpus.empty()) throw ConfigError("evaluation corpus " + dataset.string() + " has no usable identities");
  return corpus;
}

int eval(const EvalArgs& a, std::optional<uint64_t> seed) {
  auto m = training::load_inference_model(a.checkpoint);
  const auto corpus = eval_corpus(a.dataset, m.config.generator.resolution, a.test_identities);
  evaluation::EvalOptions options;
  options.mask_rates = a.rates;
  options.seg_resolution = a.seg_resolution.value_or(m.config.generator.cwsi_resolutions.back());
  options.batch_size = a.batch_size;
  if (seed) options.seed = *seed;
  const auto report = evaluation::evaluate(m.generator, m.style_encoder, m.config, corpus, options);

  std::ostringstream csv;
  csv << evaluation::metric_csv_header() << "\n";
  for (const auto& row : evaluation::metric_csv_rows(report)) csv << row << "\n";
  if (a.output) {
    if (a.output->has_parent_path()) fs::create_directories(a.output->parent_path());
    std::ofstream(*a.output) << csv.str();
  } else {
    std::cout << csv.str();
  }
  std::cout << evaluation::summary(report);
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  fs::path checkpoint, dataset;
  int64_t count = 20;
  double rate = 0.2;
};

int bench(const BenchArgs& a, std::optional<uint64_t> seed) {
  auto m = training::load_inference_model(a.checkpoint);
  const int64_t R = m.config.generator.resolution;
  const auto corpus = data::load_identity_corpus(a.dataset, R);
  if (corpus.empty()) throw ConfigError("bench corpus " + a.dataset.string() + " has no usable identities");
  const auto embedder = perception::make_embedder(m.config.embedder);
  const auto parser = perception::make_parser(m.config.parser);
  auto masks = m.config.masks;
  masks.rates = {a.rate};
  std::mt19937_64 rng(seed.value_or(0));
  torch::NoGradGuard no_grad;

  auto run_one = [&] {
    auto pair = data::sample_pair(corpus, TrainingMode::Inpainting, rng);
    auto in = training::build_mode_inputs({pair}, TrainingMode::Inpainting, masks, R, *parser, *embedder, rng);
    const auto start = std::chrono::steady_clock::now();
    const auto z_id = embedder->embed(in.reference);
    const auto style = training::style_matrix(m.style_encoder, in);
    m.generator->forward(in.corrupted, z_id, style);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  run_one();  // warm-up
  double total = 0;
  for (int64_t i = 0; i < a.count; ++i) total += run_one();
  std::cout << std::fixed << std::setprecision(3) << "mean inference time " << 1000.0 * total / a.count
            << " ms/image over " << a.count << " images at " << R << "x" << R << " (" << torch::get_num_threads()
            << " threads)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided face inpainting"};
  app.require_subcommand(1);
  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "Seed for every random choice of the command");

  MakeDatasetArgs ds;
  auto* make_ds = app.add_subcommand("make-dataset", "Write a toy identity corpus");
  make_ds->add_option("-o,--output", ds.output, "Corpus directory")->required();
  make_ds->add_option("--identities", ds.options.identities)->capture_default_str();
  make_ds->add_option("--renders", ds.options.renders_per_identity, "Images per identity")->capture_default_str();
  make_ds->add_option("--resolution", ds.options.resolution)->capture_default_str();
  make_ds->add_option("--jitter", ds.options.jitter, "Pose jitter strength")->capture_default_str();

  MakeMasksArgs mm;
  auto* make_masks_cmd = app.add_subcommand("make-masks", "Write free-form mask PNGs (255 = known, 0 = missing)");
  make_masks_cmd->add_option("-o,--output", mm.output, "Mask directory")->required();
  make_masks_cmd->add_option("--count", mm.count)->capture_default_str();
  make_masks_cmd->add_option("--rate", mm.rate, "Target missing fraction")->capture_default_str();
  make_masks_cmd->add_option("--resolution", mm.resolution)->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train from a JSON run config; flags override the file");
  train_cmd->add_option("-c,--config", tr.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", tr.output, "Output directory");
  train_cmd->add_option("--dataset", tr.dataset, "Image root");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <output>/checkpoints/latest.pt");
  train_cmd->add_flag("--single-mode", tr.single_mode, "Inpainting mode only");
  train_cmd->add_option("--max-steps", tr.max_steps);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every);
  train_cmd->add_option("--sample-every", tr.sample_every);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--lr", tr.learning_rate);
  train_cmd->add_option("--test-identities", tr.test_identities);

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Inpaint one image");
  infer_cmd->add_option("--checkpoint", inf.checkpoint)->required();
  infer_cmd->add_option("--image", inf.image, "Image to complete")->required();
  infer_cmd->add_option("--mask", inf.mask, "Mask PNG, 255 = known")->required();
  infer_cmd->add_option("--reference", inf.reference, "Identity reference")->required();
  infer_cmd->add_option("--texture-reference", inf.texture_reference,
                        "Second reference for the style matrix; defaults to --reference");
  infer_cmd->add_option("-o,--output", inf.output)->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out corpus");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Image root")->required();
  eval_cmd->add_option("--rates", ev.rates, "Mask rates")->capture_default_str();
  eval_cmd->add_option("--test-identities", ev.test_identities,
                       "Use only the last N identities (0 = all)")->capture_default_str();
  eval_cmd->add_option("--seg-resolution", ev.seg_resolution, "Segmentation branch (default: finest)");
  eval_cmd->add_option("--batch-size", ev.batch_size)->capture_default_str();
  eval_cmd->add_option("-o,--output", ev.output, "CSV path (default: stdout)");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Mean per-image inference time");
  bench_cmd->add_option("--checkpoint", bn.checkpoint)->required();
  bench_cmd->add_option("--dataset", bn.dataset, "Image root")->required();
  bench_cmd->add_option("--count", bn.count)->capture_default_str();
  bench_cmd->add_option("--rate", bn.rate)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_ds) return make_dataset(ds, seed.value_or(0));
    if (*make_masks_cmd) return make_masks(mm, seed.value_or(0));
    if (*train_cmd) return train(tr, seed);
    if (*infer_cmd) return infer(inf, seed);
    if (*eval_cmd) return eval(ev, seed);
    if (*bench_cmd) return bench(bn, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
