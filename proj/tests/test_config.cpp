#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

#include "refface/config.hpp"

using namespace refface;
using namespace refface::config;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    run_config_from_json(j).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

json minimal() { return {{"dataset", "/data/images"}, {"output_dir", "/tmp/run"}}; }

}  // namespace

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.trainer.optimizer.learning_rate == 2e-4);
  CHECK(c.trainer.optimizer.beta1 == 0.5);
  CHECK(c.trainer.optimizer.beta2 == 0.999);
  CHECK(c.trainer.optimizer.batch_size == 4);
  CHECK(c.trainer.optimizer.epochs == 300);
  CHECK(c.trainer.generator.resolution == 256);
  CHECK(c.trainer.masks.rates == std::vector<double>{0.2, 0.3, 0.4});
  CHECK_FALSE(c.trainer.single_mode);
}

TEST_CASE("round trip") {
  RunConfig c;
  c.dataset = "/data/images";
  c.output_dir = "/tmp/run";
  c.max_steps = 123;
  c.trainer.single_mode = true;
  c.trainer.seed = 42;
  c.trainer.generator.encoder_widths = {16, 32, 64};
  c.trainer.generator.decoder_widths = {64, 32, 16};
  c.trainer.generator.resolution = 64;
  c.trainer.generator.cwsi_resolutions = {32, 64};
  c.trainer.embedder.asset = "/models/arcface.pt";
  c.trainer.embedder.backend = "torchscript";
  c.trainer.masks.free_form.max_strokes = 7;
  c.trainer.weights.identity = 1.5;

  const auto j = to_json(c);
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.max_steps == 123);
  CHECK(back.trainer.single_mode);
  CHECK(back.trainer.generator == c.trainer.generator);
  CHECK(back.trainer.embedder.asset.value() == "/models/arcface.pt");
  CHECK_FALSE(back.trainer.parser.asset.has_value());

  const auto path = std::filesystem::temp_directory_path() / "refface_config_roundtrip.json";
  save_run_config(path, c);
  CHECK(to_json(load_run_config(path)) == j);
}

TEST_CASE("partial files keep defaults") {
  auto j = minimal();
  j["trainer"] = {{"optimizer", {{"batch_size", 2}}}};
  const auto c = run_config_from_json(j);
  CHECK(c.trainer.optimizer.batch_size == 2);
  CHECK(c.trainer.optimizer.learning_rate == 2e-4);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("errors name the field") {
  CHECK(error_of(json::object()).find("'dataset'") != std::string::npos);
  CHECK(error_of({{"dataset", "/x"}}).find("'output_dir'") != std::string::npos);

  auto unknown = minimal();
  unknown["trainer"] = {{"optimizer", {{"learnign_rate", 0.1}}}};
  CHECK(error_of(unknown).find("'trainer.optimizer.learnign_rate' is not recognised") != std::string::npos);

  auto wrong = minimal();
  wrong["trainer"] = {{"generator", {{"resolution", "big"}}}};
  CHECK(error_of(wrong).find("'trainer.generator.resolution' has the wrong type") != std::string::npos);

  auto not_object = minimal();
  not_object["trainer"] = 3;
  CHECK(error_of(not_object).find("'trainer' must be an object") != std::string::npos);

  auto bad_value = minimal();
  bad_value["trainer"] = {{"optimizer", {{"learning_rate", -1.0}}}};
  CHECK(error_of(bad_value).find("'trainer.optimizer.learning_rate'") != std::string::npos);

  auto bad_generator = minimal();
  bad_generator["trainer"] = {{"generator", {{"decoder_widths", {512, 256, 128, 64, 63}}}}};
  CHECK(error_of(bad_generator).find("'trainer.generator'") != std::string::npos);
}

TEST_CASE("unreadable files") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "refface_config_broken.json";
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
}
