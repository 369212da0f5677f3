#include "refface/masking.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

namespace refface::masking {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double fraction(const cv::Mat& hole) {
  return static_cast<double>(cv::countNonZero(hole)) / static_cast<double>(hole.total());
}

void draw_stroke(cv::Mat& hole, cv::Point start, int turns, double max_len, int width, std::mt19937_64& rng) {
  cv::Point p = start;
  double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  cv::circle(hole, p, width / 2, cv::Scalar(1), cv::FILLED);
  for (int t = 0; t < turns; ++t) {
    angle += uniform(rng, -0.6 * std::numbers::pi, 0.6 * std::numbers::pi);
    const double len = uniform(rng, 0.3 * max_len, max_len);
    cv::Point q(std::clamp(static_cast<int>(p.x + len * std::cos(angle)), 0, hole.cols - 1),
                std::clamp(static_cast<int>(p.y + len * std::sin(angle)), 0, hole.rows - 1));
    cv::line(hole, p, q, cv::Scalar(1), width);
    cv::circle(hole, q, width / 2, cv::Scalar(1), cv::FILLED);
    p = q;
  }
}

Mask from_hole(const cv::Mat& hole) {
  auto t = torch::from_blob(hole.data, {hole.rows, hole.cols}, torch::kUInt8).clone();
  return Mask{(t == 0).to(torch::kFloat32)};
}

cv::Mat labels_to_mat(const torch::Tensor& region) {
  auto r = region.to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(r.size(0)), static_cast<int>(r.size(1)), CV_8U);
  std::memcpy(m.data, r.data_ptr<uint8_t>(), r.numel());
  return m;
}

}  // namespace

void MaskSpec::validate() const {
  if (!(coverage > 0.0 && coverage <= 0.9)) {
    throw MaskError("mask coverage must lie in (0, 0.9], got " + std::to_string(coverage));
  }
  if (tolerance <= 0.0) throw MaskError("mask tolerance must be positive");
  if (max_attempts <= 0) throw MaskError("mask max_attempts must be positive");
}

Mask free_form_mask(const MaskSpec& spec, int64_t size, std::mt19937_64& rng) {
  spec.validate();
  const int side = static_cast<int>(size);
  const double lo = spec.coverage - spec.tolerance;
  const double hi = spec.coverage + spec.tolerance;
  const int max_width = std::max(2, static_cast<int>(spec.max_width * side));
  const double max_len = std::max(2.0, spec.max_length * side);

  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    cv::Mat hole = cv::Mat::zeros(side, side, CV_8U);
    int strokes = 0, rects = 0, rejects = 0;
    const double stop = spec.coverage - 0.5 * spec.tolerance;
    while (fraction(hole) < stop && rejects < 8) {
      const bool can_stroke = strokes < spec.max_strokes;
      const bool can_rect = rects < spec.max_rects;
      if (!can_stroke && !can_rect) break;
      cv::Mat before = hole.clone();
      if (can_rect && (!can_stroke || uniform(rng, 0, 1) < 0.15)) {
        const int w = uniform_int(rng, side / 10 + 1, std::max(side / 10 + 1, static_cast<int>(spec.max_rect_side * side)));
        const int h = uniform_int(rng, side / 10 + 1, std::max(side / 10 + 1, static_cast<int>(spec.max_rect_side * side)));
        const int x = uniform_int(rng, 0, side - 1), y = uniform_int(rng, 0, side - 1);
        cv::rectangle(hole, cv::Rect(x, y, w, h) & cv::Rect(0, 0, side, side), cv::Scalar(1), cv::FILLED);
        ++rects;
      } else {
        const cv::Point start(uniform_int(rng, 0, side - 1), uniform_int(rng, 0, side - 1));
        const int width = uniform_int(rng, std::max(2, max_width / 3), max_width);
        draw_stroke(hole, start, uniform_int(rng, 1, std::max(1, spec.max_turns)), max_len, width, rng);
        ++strokes;
      }
      if (fraction(hole) > hi) {
        hole = before;
        ++rejects;
      }
    }
    const double f = fraction(hole);
    if (f >= lo && f <= hi) return from_hole(hole);
  }
  throw MaskError("could not reach mask coverage " + std::to_string(spec.coverage) + " within " +
                  std::to_string(spec.max_attempts) + " attempts");
}

std::optional<std::array<int64_t, 4>> component_box(const SegMap& seg, int64_t dilation) {
  auto region = seg.component_region();
  if (!region.any().item<bool>()) return std::nullopt;
  auto rows = torch::nonzero(region.any(1)).flatten();
  auto cols = torch::nonzero(region.any(0)).flatten();
  const int64_t H = seg.height(), W = seg.width();
  return std::array<int64_t, 4>{std::max<int64_t>(0, rows.min().item<int64_t>() - dilation),
                                std::max<int64_t>(0, cols.min().item<int64_t>() - dilation),
                                std::min<int64_t>(H - 1, rows.max().item<int64_t>() + dilation),
                                std::min<int64_t>(W - 1, cols.max().item<int64_t>() + dilation)};
}

Mask segmentation_mode_mask(const SegMap& seg_gt, std::mt19937_64& rng, const SegmentationMaskOptions& options) {
  for (int64_t cls : kComponentClasses) {
    if (!seg_gt.has_class(cls)) {
      throw MaskError("segmentation-mode mask needs all five components in the label map");
    }
  }
  const int side = static_cast<int>(seg_gt.height());
  const auto dilation = static_cast<int64_t>(std::lround(options.central_dilation_256 * side / 256.0));
  const auto box = *component_box(seg_gt, dilation);

  cv::Mat allowed(side, side, CV_8U, cv::Scalar(1));
  allowed(cv::Rect(static_cast<int>(box[1]), static_cast<int>(box[0]), static_cast<int>(box[3] - box[1] + 1),
                   static_cast<int>(box[2] - box[0] + 1)))
      .setTo(0);
  const double allowed_fraction = fraction(allowed);
  const double target = uniform(rng, options.min_missing, options.max_missing);

  cv::Mat hole = cv::Mat::zeros(side, side, CV_8U);
  if (allowed_fraction < 2.0 * options.min_missing) {
    // Components fill most of the frame: thin strips along the border only.
    const int strip = std::max(1, side / 64);
    cv::Mat border = cv::Mat::zeros(side, side, CV_8U);
    cv::rectangle(border, cv::Rect(0, 0, side, side), cv::Scalar(1), strip * 2);
    cv::bitwise_and(border, allowed, hole);
    if (fraction(hole) > options.max_missing) hole.setTo(0);
    return from_hole(hole);
  }

  const int width_hi = std::max(2, side / 20);
  const double len = std::max(3.0, 0.12 * side);
  for (int rejects = 0; fraction(hole) < target && rejects < 32;) {
    cv::Point start;
    do {
      start = cv::Point(uniform_int(rng, 0, side - 1), uniform_int(rng, 0, side - 1));
    } while (!allowed.at<uint8_t>(start));
    cv::Mat stroke = cv::Mat::zeros(side, side, CV_8U);
    draw_stroke(stroke, start, uniform_int(rng, 1, 3), len, uniform_int(rng, std::max(1, width_hi / 2), width_hi), rng);
    cv::bitwise_and(stroke, allowed, stroke);
    cv::Mat candidate;
    cv::bitwise_or(hole, stroke, candidate);
    if (fraction(candidate) > options.max_missing) {
      ++rejects;
      continue;
    }
    hole = candidate;
  }
  return from_hole(hole);
}

Mask style_extracting_mask(const SegMap& seg_gt, int64_t dilation_px) {
  cv::Mat region = labels_to_mat(seg_gt.component_region());
  if (dilation_px > 0) {
    const int k = static_cast<int>(2 * dilation_px + 1);
    cv::dilate(region, region, cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(k, k)));
  }
  return from_hole(region);
}

torch::Tensor compose_corrupted(const torch::Tensor& image, const torch::Tensor& mask) {
  auto img = image.dim() == 3 ? image.unsqueeze(0) : image;
  auto m = mask;
  if (m.dim() == 2) m = m.unsqueeze(0).unsqueeze(0);
  else if (m.dim() == 3) m = m.unsqueeze(1);
  if (img.dim() != 4 || img.size(1) != 3 || m.size(0) != img.size(0) || m.size(1) != 1 ||
      m.size(2) != img.size(2) || m.size(3) != img.size(3)) {
    throw std::invalid_argument("compose_corrupted: image " + std::to_string(img.size(2)) + "x" +
                                std::to_string(img.size(3)) + " and mask shapes do not match");
  }
  m = m.to(img.dtype());
  auto out = torch::cat({img * m, m}, 1);
  return image.dim() == 3 ? out.squeeze(0) : out;
}

}  // namespace refface::masking
