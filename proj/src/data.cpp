#include "refface/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <queue>

#include "refface/image_io.hpp"

namespace fs = std::filesystem;

namespace refface::data {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::array<double, 3> random_color(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

Texture random_texture(std::mt19937_64& rng, std::array<double, 3> base) {
  Texture t;
  t.base = base;
  for (int c = 0; c < 3; ++c) t.stripe[c] = std::clamp(base[c] + uniform(rng, -0.35, 0.35), 0.0, 1.0);
  t.period = uniform(rng, 0.012, 0.03);
  t.angle = uniform(rng, 0.0, std::numbers::pi);
  return t;
}

std::array<double, 3> shade(const Texture& t, double lx, double ly) {
  const double u = lx * std::cos(t.angle) + ly * std::sin(t.angle);
  const auto band = static_cast<int64_t>(std::floor(u / t.period));
  return (band & 1) ? t.stripe : t.base;
}

bool inside(const Ellipse& e, double qx, double qy, double& lx, double& ly) {
  const double dx = qx - e.cx, dy = qy - e.cy;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  lx = c * dx + s * dy;
  ly = -s * dx + c * dy;
  return (lx * lx) / (e.rx * e.rx) + (ly * ly) / (e.ry * e.ry) <= 1.0;
}

ToyFace render(const ToyFaceSpec& spec, const PoseJitter& pose) {
  const int64_t R = spec.resolution;
  const auto& id = spec.identity;
  auto image = torch::empty({3, R, R}, torch::kUInt8);
  auto labels = torch::empty({R, R}, torch::kInt64);
  auto img = image.accessor<uint8_t, 3>();
  auto lab = labels.accessor<int64_t, 2>();

  const double cth = std::cos(-pose.rotation), sth = std::sin(-pose.rotation);
  const double ox = id.face_cx + pose.dx, oy = id.face_cy + pose.dy;
  const double gain = 1.0 + pose.brightness;

  for (int64_t y = 0; y < R; ++y) {
    for (int64_t x = 0; x < R; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(R) - ox;
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(R) - oy;
      const double qx = (cth * px - sth * py) / pose.scale;
      const double qy = (sth * px + cth * py) / pose.scale;

      int64_t cls = seg_class::kBackground;
      std::array<double, 3> color = pose.background;
      double lx = 0, ly = 0;
      bool hit = false;
      for (int64_t k = 0; k < kNumComponents && !hit; ++k) {
        if (inside(id.shapes[k], qx, qy, lx, ly)) {
          cls = kComponentClasses[k];
          color = shade(id.textures[k], lx, ly);
          hit = true;
        }
      }
      if (!hit && inside(id.face, qx, qy, lx, ly)) {
        cls = seg_class::kSkin;
        color = id.skin;
      }
      if (cls != seg_class::kBackground) {
        for (auto& c : color) c = std::clamp(c * gain, 0.0, 1.0);
      }
      for (int c = 0; c < 3; ++c) {
        auto v = static_cast<int>(std::lround(color[c] * 255.0));
        v = std::clamp(v, 0, 255);
        if (c == 2) v = (v & 0xF8) | static_cast<int>(cls);
        img[c][y][x] = static_cast<uint8_t>(v);
      }
      lab[y][x] = cls;
    }
  }
  return ToyFace{image, SegMap{labels, seg_class::kCount}, spec.identity_id, pose};
}

nlohmann::json ellipse_json(const Ellipse& e) {
  return {{"cx", e.cx}, {"cy", e.cy}, {"rx", e.rx}, {"ry", e.ry}, {"angle", e.angle}};
}

nlohmann::json pose_json(const PoseJitter& p) {
  return {{"dx", p.dx},           {"dy", p.dy},
          {"scale", p.scale},     {"rotation", p.rotation},
          {"brightness", p.brightness}, {"background", p.background}};
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

ToyIdentity sample_toy_identity(std::mt19937_64& rng) {
  ToyIdentity id;
  id.face_cx = 0.5 + uniform(rng, -0.015, 0.015);
  id.face_cy = 0.52 + uniform(rng, -0.015, 0.015);
  id.face = Ellipse{0, 0, uniform(rng, 0.27, 0.33), uniform(rng, 0.34, 0.40), 0};
  const double r = uniform(rng, 0.55, 0.95);
  const double g = r * uniform(rng, 0.65, 0.85);
  id.skin = {r, g, g * uniform(rng, 0.6, 0.85)};

  const double spacing = uniform(rng, 0.10, 0.13);
  const double eye_y = uniform(rng, -0.09, -0.05);
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? -1.0 : 1.0;
    Ellipse eye{sign * spacing + uniform(rng, -0.005, 0.005), eye_y + uniform(rng, -0.005, 0.005),
                uniform(rng, 0.045, 0.06), uniform(rng, 0.022, 0.032), uniform(rng, -0.15, 0.15)};
    const double brow_ry = uniform(rng, 0.014, 0.02);
    const double gap = eye.ry + brow_ry + uniform(rng, 0.02, 0.035);
    Ellipse brow{eye.cx + uniform(rng, -0.005, 0.005), eye.cy - gap, uniform(rng, 0.05, 0.07), brow_ry,
                 uniform(rng, -0.2, 0.2)};
    id.shapes[side] = eye;       // left / right eye
    id.shapes[2 + side] = brow;  // left / right brow
  }
  id.shapes[4] = Ellipse{uniform(rng, -0.01, 0.01), uniform(rng, 0.15, 0.2), uniform(rng, 0.08, 0.12),
                         uniform(rng, 0.025, 0.04), uniform(rng, -0.1, 0.1)};

  const auto iris = random_color(rng, 0.05, 0.6);
  id.textures[0] = random_texture(rng, iris);
  id.textures[1] = random_texture(rng, iris);
  const auto brow = random_color(rng, 0.05, 0.45);
  id.textures[2] = random_texture(rng, brow);
  id.textures[3] = random_texture(rng, brow);
  id.textures[4] = random_texture(rng, {uniform(rng, 0.5, 0.9), uniform(rng, 0.1, 0.4), uniform(rng, 0.15, 0.45)});
  return id;
}

PoseJitter sample_pose(std::mt19937_64& rng, double strength) {
  PoseJitter p;
  p.dx = strength * uniform(rng, -0.04, 0.04);
  p.dy = strength * uniform(rng, -0.04, 0.04);
  p.scale = 1.0 + strength * uniform(rng, -0.07, 0.07);
  p.rotation = strength * uniform(rng, -0.12, 0.12);
  p.brightness = strength * uniform(rng, -0.08, 0.08);
  p.background = random_color(rng, 0.1, 0.9);
  return p;
}

bool toy_labels_valid(const SegMap& seg) {
  const int64_t H = seg.height(), W = seg.width();
  auto lab = seg.labels.accessor<int64_t, 2>();
  for (int64_t cls = 0; cls < seg_class::kCount; ++cls) {
    if (!seg.has_class(cls)) return false;
  }
  for (int64_t cls : kComponentClasses) {
    int64_t count = 0, sy = -1, sx = -1;
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        if (lab[y][x] != cls) continue;
        if (y == 0 || x == 0 || y == H - 1 || x == W - 1) return false;
        if (count++ == 0) sy = y, sx = x;
      }
    }
    if (count == 0) return false;
    // 8-connected flood fill from the first pixel must reach every pixel.
    std::vector<uint8_t> seen(static_cast<size_t>(H * W), 0);
    std::queue<std::pair<int64_t, int64_t>> q;
    q.emplace(sy, sx);
    seen[static_cast<size_t>(sy * W + sx)] = 1;
    int64_t reached = 0;
    while (!q.empty()) {
      auto [y, x] = q.front();
      q.pop();
      ++reached;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          auto& s = seen[static_cast<size_t>(ny * W + nx)];
          if (!s && lab[ny][nx] == cls) {
            s = 1;
            q.emplace(ny, nx);
          }
        }
      }
    }
    if (reached != count) return false;
  }
  return true;
}

ToyFace generate_toy_face(const ToyFaceSpec& spec) {
  if (spec.resolution < 16) throw ConfigError("toy face resolution must be at least 16");
  auto face = render(spec, spec.pose);
  if (toy_labels_valid(face.seg)) return face;

  std::mt19937_64 rng(spec.seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double strength = 1.0 - attempt / 64.0;
    auto pose = sample_pose(rng, strength);
    pose.background = spec.pose.background;
    face = render(spec, pose);
    if (toy_labels_valid(face.seg)) return face;
  }
  PoseJitter canonical;
  canonical.background = spec.pose.background;
  face = render(spec, canonical);
  if (!toy_labels_valid(face.seg)) {
    throw ConfigError("toy identity '" + spec.identity_id + "' cannot be rendered at resolution " +
                      std::to_string(spec.resolution));
  }
  return face;
}

nlohmann::json to_json(const ToyIdentity& identity) {
  nlohmann::json j;
  j["face_center"] = {identity.face_cx, identity.face_cy};
  j["face"] = ellipse_json(identity.face);
  j["skin"] = identity.skin;
  for (int64_t k = 0; k < kNumComponents; ++k) {
    const auto& t = identity.textures[k];
    j["components"][std::string(kComponentNames[k])] = {
        {"shape", ellipse_json(identity.shapes[k])},
        {"texture", {{"base", t.base}, {"stripe", t.stripe}, {"period", t.period}, {"angle", t.angle}}}};
  }
  return j;
}

fs::path write_toy_corpus(const fs::path& dir, const ToyCorpusOptions& options) {
  if (options.identities <= 0 || options.renders_per_identity < 2) {
    throw ConfigError("toy corpus needs at least one identity and two renders per identity");
  }
  std::mt19937_64 rng(options.seed);
  const fs::path images = dir / "images";
  const fs::path segs = dir / "seg";
  nlohmann::json manifest;
  manifest["resolution"] = options.resolution;
  manifest["seed"] = options.seed;
  manifest["jitter"] = options.jitter;
  manifest["identities"] = nlohmann::json::array();

  for (int64_t i = 0; i < options.identities; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "id_%05lld", static_cast<long long>(i));
    ToyFaceSpec spec;
    spec.identity_id = name;
    spec.identity = sample_toy_identity(rng);
    spec.resolution = options.resolution;
    nlohmann::json entry{{"id", spec.identity_id}, {"params", to_json(spec.identity)}};
    entry["renders"] = nlohmann::json::array();
    for (int64_t k = 0; k < options.renders_per_identity; ++k) {
      spec.pose = sample_pose(rng, options.jitter);
      spec.seed = rng();
      auto face = generate_toy_face(spec);
      const std::string file = std::to_string(k) + ".png";
      io::write_rgb(images / spec.identity_id / file, face.image);
      io::write_gray(segs / spec.identity_id / file, face.seg.labels.to(torch::kUInt8));
      entry["renders"].push_back({{"file", file}, {"pose", pose_json(face.pose)}});
    }
    manifest["identities"].push_back(std::move(entry));
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  return images;
}

int64_t IdentityCorpus::image_count() const {
  int64_t n = 0;
  for (const auto& [id, records] : index) n += static_cast<int64_t>(records.size());
  return n;
}

IdentityCorpus load_identity_corpus(const fs::path& root, int64_t resolution, const CorpusLoadOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw std::runtime_error("cannot read corpus root " + root.string());
  const fs::path seg_root = options.seg_root.value_or(root.parent_path() / "seg");

  IdentityCorpus corpus;
  corpus.root = root;
  corpus.resolution = resolution;

  std::vector<fs::path> identity_dirs;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    if (entry.is_directory()) identity_dirs.push_back(entry.path());
  }
  if (ec) throw std::runtime_error("cannot read corpus root " + root.string() + ": " + ec.message());
  std::sort(identity_dirs.begin(), identity_dirs.end());

  for (const auto& dir : identity_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    const std::string identity = dir.filename().string();
    std::vector<ImageRecord> records;
    for (const auto& file : files) {
      auto rgb = io::read_rgb(file);
      if (!rgb) {
        std::cerr << "[warn] skipping undecodable image " << file << '\n';
        ++corpus.skipped_images;
        continue;
      }
      ImageRecord record;
      record.image_path = file;
      record.image = io::resize_rgb(*rgb, resolution);
      const fs::path seg_file = seg_root / identity / (file.stem().string() + ".png");
      if (fs::exists(seg_file)) {
        if (auto raw = io::read_gray(seg_file)) {
          auto labels = io::resize_labels(*raw, resolution).to(torch::kInt64);
          if (options.class_lookup) {
            auto lut = torch::from_blob(const_cast<int64_t*>(options.class_lookup->data()), {256}, torch::kInt64);
            labels = lut.index({labels});
          }
          record.seg_path = seg_file;
          record.seg = SegMap{labels.contiguous(), seg_class::kCount};
        }
      }
      records.push_back(std::move(record));
    }
    if (records.size() < 2) {
      ++corpus.excluded_identities;
      continue;
    }
    corpus.index.emplace(identity, std::move(records));
    corpus.identity_ids.push_back(identity);
  }
  if (corpus.excluded_identities > 0) {
    std::cerr << "[warn] excluded " << corpus.excluded_identities << " identities with fewer than two images\n";
  }
  return corpus;
}

std::pair<IdentityCorpus, IdentityCorpus> split_corpus(const IdentityCorpus& corpus, int64_t test_identities) {
  const auto n = static_cast<int64_t>(corpus.identity_ids.size());
  if (test_identities <= 0 || test_identities >= n) {
    throw ConfigError("test split must leave identities on both sides");
  }
  IdentityCorpus train, test;
  for (auto* part : {&train, &test}) {
    part->root = corpus.root;
    part->resolution = corpus.resolution;
  }
  for (int64_t i = 0; i < n; ++i) {
    const auto& id = corpus.identity_ids[static_cast<size_t>(i)];
    auto& part = i < n - test_identities ? train : test;
    part.index.emplace(id, corpus.index.at(id));
    part.identity_ids.push_back(id);
  }
  return {std::move(train), std::move(test)};
}

SamplePair sample_pair(const IdentityCorpus& corpus, TrainingMode mode, std::mt19937_64& rng) {
  if (corpus.empty()) throw std::runtime_error("cannot sample from an empty corpus");
  std::uniform_int_distribution<size_t> pick_identity(0, corpus.identity_ids.size() - 1);
  const auto& identity = corpus.identity_ids[pick_identity(rng)];
  const auto& records = corpus.index.at(identity);

  std::uniform_int_distribution<int64_t> pick_target(0, static_cast<int64_t>(records.size()) - 1);
  const int64_t target = pick_target(rng);
  int64_t reference = target;
  if (mode == TrainingMode::Inpainting) {
    std::uniform_int_distribution<int64_t> pick_other(0, static_cast<int64_t>(records.size()) - 2);
    reference = pick_other(rng);
    if (reference >= target) ++reference;
  }
  const auto& t = records[static_cast<size_t>(target)];
  const auto& r = records[static_cast<size_t>(reference)];
  return SamplePair{identity, target, reference, t.image, r.image, t.seg, r.seg};
}

}  // namespace refface::data
