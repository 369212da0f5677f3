#include "refface/config.hpp"

#include <fstream>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace refface {
namespace {

// Reads keys of one JSON object, reporting problems with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field '" + display() + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("config field '" + field(key) + "' is not recognised");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config field '" + field(key) + "' has the wrong type: " + e.what());
    }
  }

  void get(const std::string& key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void get(const std::string& key, std::optional<fs::path>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    std::string s;
    get(key, s);
    out = s;
  }

  template <typename Fn>
  void object(const std::string& key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Reader nested(j_.at(key), field(key));
    fn(nested);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

void read_mask_spec(Reader& r, masking::MaskSpec& m) {
  r.get("coverage", m.coverage);
  r.get("tolerance", m.tolerance);
  r.get("max_strokes", m.max_strokes);
  r.get("max_length", m.max_length);
  r.get("max_width", m.max_width);
  r.get("max_turns", m.max_turns);
  r.get("max_rects", m.max_rects);
  r.get("max_rect_side", m.max_rect_side);
  r.get("max_attempts", m.max_attempts);
  r.get("seed", m.seed);
}

}  // namespace

namespace training {

json to_json(const TrainerConfig& c) {
  const auto& m = c.masks.free_form;
  return {
      {"generator", model::to_json(c.generator)},
      {"style_encoder", {{"widths", c.style_encoder.widths}}},
      {"discriminators",
       {{"global_widths", c.discriminators.global_widths}, {"local_widths", c.discriminators.local_widths}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epochs", c.optimizer.epochs},
        {"batch_size", c.optimizer.batch_size}}},
      {"weights",
       {{"reconstruction", c.weights.reconstruction},
        {"perceptual", c.weights.perceptual},
        {"identity", c.weights.identity},
        {"segmentation", c.weights.segmentation}}},
      {"masks",
       {{"free_form",
         {{"coverage", m.coverage},
          {"tolerance", m.tolerance},
          {"max_strokes", m.max_strokes},
          {"max_length", m.max_length},
          {"max_width", m.max_width},
          {"max_turns", m.max_turns},
          {"max_rects", m.max_rects},
          {"max_rect_side", m.max_rect_side},
          {"max_attempts", m.max_attempts},
          {"seed", m.seed}}},
        {"rates", c.masks.rates},
        {"segmentation",
         {{"central_dilation_256", c.masks.segmentation.central_dilation_256},
          {"max_missing", c.masks.segmentation.max_missing},
          {"min_missing", c.masks.segmentation.min_missing}}},
        {"style_dilation_256", c.masks.style_dilation_256}}},
      {"embedder",
       {{"backend", c.embedder.backend},
        {"asset", optional_path(c.embedder.asset)},
        {"input_size", c.embedder.input_size},
        {"seed", c.embedder.seed}}},
      {"parser",
       {{"backend", c.parser.backend},
        {"asset", optional_path(c.parser.asset)},
        {"class_lookup", c.parser.class_lookup}}},
      {"perceptual",
       {{"backend", c.perceptual.backend},
        {"asset", optional_path(c.perceptual.asset)},
        {"layers", c.perceptual.layers},
        {"seed", c.perceptual.seed}}},
      {"single_mode", c.single_mode},
      {"seed", c.seed},
      {"nonfinite_limit", c.nonfinite_limit},
  };
}

static void read_trainer(Reader& r, TrainerConfig& c) {
  r.object("generator", [&](Reader& g) {
    auto& x = c.generator;
    g.get("resolution", x.resolution);
    g.get("encoder_widths", x.encoder_widths);
    g.get("decoder_widths", x.decoder_widths);
    g.get("identity_dim", x.identity_dim);
    g.get("style_dim", x.style_dim);
    g.get("style_hidden", x.style_hidden);
    g.get("cwsi_resolutions", x.cwsi_resolutions);
    g.get("num_classes", x.num_classes);
  });
  r.object("style_encoder", [&](Reader& s) { s.get("widths", c.style_encoder.widths); });
  r.object("discriminators", [&](Reader& d) {
    d.get("global_widths", c.discriminators.global_widths);
    d.get("local_widths", c.discriminators.local_widths);
  });
  r.object("optimizer", [&](Reader& o) {
    o.get("learning_rate", c.optimizer.learning_rate);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("epochs", c.optimizer.epochs);
    o.get("batch_size", c.optimizer.batch_size);
  });
  r.object("weights", [&](Reader& w) {
    w.get("reconstruction", c.weights.reconstruction);
    w.get("perceptual", c.weights.perceptual);
    w.get("identity", c.weights.identity);
    w.get("segmentation", c.weights.segmentation);
  });
  r.object("masks", [&](Reader& m) {
    m.object("free_form", [&](Reader& f) { read_mask_spec(f, c.masks.free_form); });
    m.get("rates", c.masks.rates);
    m.object("segmentation", [&](Reader& s) {
      s.get("central_dilation_256", c.masks.segmentation.central_dilation_256);
      s.get("max_missing", c.masks.segmentation.max_missing);
      s.get("min_missing", c.masks.segmentation.min_missing);
    });
    m.get("style_dilation_256", c.masks.style_dilation_256);
  });
  r.object("embedder", [&](Reader& e) {
    e.get("backend", c.embedder.backend);
    e.get("asset", c.embedder.asset);
    e.get("input_size", c.embedder.input_size);
    e.get("seed", c.embedder.seed);
  });
  r.object("parser", [&](Reader& p) {
    p.get("backend", c.parser.backend);
    p.get("asset", c.parser.asset);
    p.get("class_lookup", c.parser.class_lookup);
  });
  r.object("perceptual", [&](Reader& p) {
    p.get("backend", c.perceptual.backend);
    p.get("asset", c.perceptual.asset);
    p.get("layers", c.perceptual.layers);
    p.get("seed", c.perceptual.seed);
  });
  r.get("single_mode", c.single_mode);
  r.get("seed", c.seed);
  r.get("nonfinite_limit", c.nonfinite_limit);
}

TrainerConfig trainer_config_from_json(const json& j) {
  TrainerConfig c;
  {
    Reader r(j, "");
    read_trainer(r, c);
  }
  return c;
}

}  // namespace training

namespace config {

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("config field 'dataset' is required (path to the image root)");
  if (output_dir.empty()) throw ConfigError("config field 'output_dir' is required");
  if (test_identities < 0) throw ConfigError("config field 'test_identities' must be non-negative");
  if (max_steps < 0) throw ConfigError("config field 'max_steps' must be non-negative");
  if (checkpoint_every <= 0) throw ConfigError("config field 'checkpoint_every' must be positive");
  if (sample_every <= 0) throw ConfigError("config field 'sample_every' must be positive");
  const auto& o = trainer.optimizer;
  if (o.learning_rate <= 0) throw ConfigError("config field 'trainer.optimizer.learning_rate' must be positive");
  if (o.batch_size <= 0) throw ConfigError("config field 'trainer.optimizer.batch_size' must be positive");
  if (o.epochs <= 0) throw ConfigError("config field 'trainer.optimizer.epochs' must be positive");
  if (trainer.masks.rates.empty()) throw ConfigError("config field 'trainer.masks.rates' must not be empty");
  try {
    trainer.generator.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config field 'trainer.generator': ") + e.what());
  }
}

json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset.string()},
          {"output_dir", c.output_dir.string()},
          {"test_identities", c.test_identities},
          {"max_steps", c.max_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"sample_every", c.sample_every},
          {"trainer", training::to_json(c.trainer)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  {
    Reader r(j, "");
    r.get("dataset", c.dataset);
    r.get("output_dir", c.output_dir);
    r.get("test_identities", c.test_identities);
    r.get("max_steps", c.max_steps);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("sample_every", c.sample_every);
    r.object("trainer", [&](Reader& t) { training::read_trainer(t, c.trainer); });
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const fs::path& path, const RunConfig& config) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace config
}  // namespace refface
