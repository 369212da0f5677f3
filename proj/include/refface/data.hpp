#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::data {

// ---------------------------------------------------------------------------
// Procedural toy faces
// ---------------------------------------------------------------------------

/// Axis-aligned (in the face frame) ellipse. Coordinates are fractions of the
/// image side, relative to the face centre.
struct Ellipse {
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;
};

/// Two-colour stripe texture painted inside a region.
struct Texture {
  std::array<double, 3> base{};
  std::array<double, 3> stripe{};
  double period = 0.02;  // fraction of image side
  double angle = 0;      // radians
};

struct ToyIdentity {
  double face_cx = 0.5, face_cy = 0.52;
  Ellipse face;
  std::array<double, 3> skin{};
  /// Indexed like kComponentClasses: left eye, right eye, left brow, right brow, lip.
  std::array<Ellipse, kNumComponents> shapes{};
  std::array<Texture, kNumComponents> textures{};
};

/// Per-photo nuisance parameters; identity parameters never change with pose.
struct PoseJitter {
  double dx = 0, dy = 0;
  double scale = 1.0;
  double rotation = 0;  // radians
  double brightness = 0;
  std::array<double, 3> background{0.25, 0.3, 0.35};
};

struct ToyFaceSpec {
  std::string identity_id;
  ToyIdentity identity;
  PoseJitter pose;
  int64_t resolution = 256;
  /// Seeds the internal re-sampling of degenerate poses.
  uint64_t seed = 0;
};

struct ToyFace {
  torch::Tensor image;  // uint8 [3, R, R]
  SegMap seg;
  std::string identity_id;
  /// Pose actually rendered (differs from the requested one after re-sampling).
  PoseJitter pose;
};

ToyIdentity sample_toy_identity(std::mt19937_64& rng);
/// `strength` scales every jitter range; 0 gives the canonical pose.
PoseJitter sample_pose(std::mt19937_64& rng, double strength = 1.0);

/// Renders an image with a pixel-aligned label map. The low three bits of the
/// blue channel carry the class label so the toy parser can recover labels
/// exactly from pixels.
ToyFace generate_toy_face(const ToyFaceSpec& spec);

/// True when every component occupies a non-empty, 8-connected region that
/// does not touch the canvas border, and all seven classes are present.
bool toy_labels_valid(const SegMap& seg);

nlohmann::json to_json(const ToyIdentity& identity);

struct ToyCorpusOptions {
  int64_t identities = 200;
  int64_t renders_per_identity = 4;
  int64_t resolution = 256;
  double jitter = 1.0;
  uint64_t seed = 0;
};

/// Writes <dir>/images/<id>/<k>.png, <dir>/seg/<id>/<k>.png and
/// <dir>/manifest.json. Returns the image root (<dir>/images).
std::filesystem::path write_toy_corpus(const std::filesystem::path& dir, const ToyCorpusOptions& options);

// ---------------------------------------------------------------------------
// Identity-grouped corpora
// ---------------------------------------------------------------------------

struct ImageRecord {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> seg_path;
  torch::Tensor image;  // uint8 [3, R, R]
  std::optional<SegMap> seg;
};

struct IdentityCorpus {
  std::filesystem::path root;
  int64_t resolution = 256;
  std::map<std::string, std::vector<ImageRecord>> index;
  std::vector<std::string> identity_ids;  // sorted keys of `index`
  int64_t excluded_identities = 0;        // fewer than two decodable images
  int64_t skipped_images = 0;             // undecodable files

  bool empty() const { return identity_ids.empty(); }
  int64_t image_count() const;
};

struct CorpusLoadOptions {
  /// Defaults to <root>/../seg when unset.
  std::optional<std::filesystem::path> seg_root;
  /// Maps raw label values found in seg PNGs onto the seven-class vocabulary.
  /// Unset means identity mapping.
  std::optional<std::array<int64_t, 256>> class_lookup;
};

/// Loads root/<identity>/<image>.png. Throws std::runtime_error when the root
/// cannot be read. Undecodable images are skipped and counted; identities left
/// with fewer than two images are dropped and counted.
IdentityCorpus load_identity_corpus(const std::filesystem::path& root, int64_t resolution,
                                    const CorpusLoadOptions& options = {});

/// Splits off the last `test_identities` identities (in sorted order).
std::pair<IdentityCorpus, IdentityCorpus> split_corpus(const IdentityCorpus& corpus, int64_t test_identities);

struct SamplePair {
  std::string identity_id;
  int64_t target_index = 0;
  int64_t reference_index = 0;
  torch::Tensor target;     // uint8 [3, R, R], becomes the ground truth
  torch::Tensor reference;  // uint8 [3, R, R]
  std::optional<SegMap> seg_target;
  std::optional<SegMap> seg_reference;
};

/// Inpainting mode pairs the target with a different photo of the same
/// identity; Segmentation and StyleExtracting modes use the target itself.
SamplePair sample_pair(const IdentityCorpus& corpus, TrainingMode mode, std::mt19937_64& rng);

}  // namespace refface::data
