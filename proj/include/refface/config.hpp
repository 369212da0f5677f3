#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "refface/trainer.hpp"

namespace refface::config {

/// Everything a training run depends on. Serialises to JSON; the copy written
/// next to a run's outputs reproduces its static choices.
struct RunConfig {
  std::filesystem::path dataset;     // image root: <dir>/images
  std::filesystem::path output_dir;
  /// Identities held out for evaluation (last in sorted order).
  int64_t test_identities = 20;
  /// Stop after this many steps; 0 runs optimizer.epochs passes over the corpus.
  int64_t max_steps = 0;
  int64_t checkpoint_every = 500;
  int64_t sample_every = 250;
  training::TrainerConfig trainer;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys and type mismatches raise ConfigError with the field path.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace refface::config
