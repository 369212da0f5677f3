#pragma once

#include <cstdint>
#include <random>

#include <torch/torch.h>

#include "refface/types.hpp"

namespace refface::masking {

/// Free-form mask parameters. Lengths and widths are fractions of the image side.
struct MaskSpec {
  double coverage = 0.2;  // target missing fraction, (0, 0.9]
  double tolerance = 0.05;
  int max_strokes = 16;
  double max_length = 0.25;
  double max_width = 0.08;
  int max_turns = 4;
  int max_rects = 2;
  double max_rect_side = 0.35;
  int max_attempts = 200;
  uint64_t seed = 0;

  void validate() const;
};

class MaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random brush strokes plus rectangles, rejection-resampled until the missing
/// fraction lies within coverage +- tolerance.
Mask free_form_mask(const MaskSpec& spec, int64_t size, std::mt19937_64& rng);

struct SegmentationMaskOptions {
  /// Dilation of the component bounding box, in pixels at 256x256; scaled with
  /// the map size.
  double central_dilation_256 = 8.0;
  double max_missing = 0.10;
  double min_missing = 0.02;
};

/// Small off-centre mask whose missing pixels never touch the dilated bounding
/// box of the five facial components.
Mask segmentation_mode_mask(const SegMap& seg_gt, std::mt19937_64& rng, const SegmentationMaskOptions& options = {});

/// Missing region = union of the five component regions, each dilated by
/// `dilation_px` with an elliptical structuring element.
Mask style_extracting_mask(const SegMap& seg_gt, int64_t dilation_px = 4);

/// Bounding box (y0, x0, y1, x1 inclusive) of the component classes dilated by
/// `dilation` and clamped to the map. Returns nullopt when no component pixel exists.
std::optional<std::array<int64_t, 4>> component_box(const SegMap& seg, int64_t dilation);

/// image [3,H,W] or [B,3,H,W] in model range, mask [H,W] or [B,1,H,W];
/// returns image*mask with the mask appended as a fourth channel.
torch::Tensor compose_corrupted(const torch::Tensor& image, const torch::Tensor& mask);

}  // namespace refface::masking
