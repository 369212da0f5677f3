#include "doctest_torch.hpp"

#include <filesystem>

#include "refface/image_io.hpp"
#include "refface/types.hpp"

using namespace refface;
namespace fs = std::filesystem;

TEST_CASE("training mode names round-trip") {
  for (auto m : {TrainingMode::Inpainting, TrainingMode::Segmentation, TrainingMode::StyleExtracting}) {
    CHECK(training_mode_from_string(to_string(m)) == m);
  }
  CHECK_THROWS(training_mode_from_string("painting"));
}

TEST_CASE("mask statistics") {
  Mask m{torch::ones({4, 4})};
  CHECK(m.missing_fraction() == 0.0);
  m.values[0][0] = 0;
  m.values[1][1] = 0;
  CHECK(m.missing_fraction() == doctest::Approx(2.0 / 16.0));
  CHECK(m.is_binary());
  m.values[2][2] = 0.5;
  CHECK_FALSE(m.is_binary());
}

TEST_CASE("segmentation map helpers") {
  auto labels = torch::tensor({0, 1, 2, 6, 6, 0}, torch::kInt64).view({2, 3});
  SegMap s{labels, seg_class::kCount};
  auto oh = s.one_hot();
  CHECK(oh.sizes() == torch::IntArrayRef({7, 2, 3}));
  CHECK(torch::equal(oh.sum(0), torch::ones({2, 3})));
  CHECK(s.has_class(seg_class::kLip));
  CHECK_FALSE(s.has_class(seg_class::kLeftBrow));
  auto region = s.component_region();
  CHECK(region.sum().item<int64_t>() == 3);
}

TEST_CASE("value range conversions") {
  auto rgb = torch::randint(0, 256, {3, 5, 5}, torch::kUInt8);
  auto x = to_model_range(rgb);
  CHECK(x.min().item<float>() >= -1.0f);
  CHECK(x.max().item<float>() <= 1.0f);
  CHECK(torch::equal(to_rgb8(x), rgb));
}

TEST_CASE("label downsampling picks nearest labels") {
  auto labels = torch::arange(16, torch::kInt64).view({4, 4});
  auto d = downsample_labels(labels, 2);
  CHECK(d.sizes() == torch::IntArrayRef({2, 2}));
  CHECK(torch::equal(downsample_labels(labels.unsqueeze(0), 4).squeeze(0), labels));
}

TEST_CASE("image and mask files round-trip") {
  const auto dir = fs::temp_directory_path() / "refface_types_io";
  fs::create_directories(dir);
  auto rgb = torch::randint(0, 256, {3, 16, 16}, torch::kUInt8);
  io::write_rgb(dir / "a.png", rgb);
  auto back = io::read_rgb(dir / "a.png");
  REQUIRE(back.has_value());
  CHECK(torch::equal(*back, rgb));

  Mask m{(torch::rand({16, 16}) > 0.5).to(torch::kFloat32)};
  io::write_mask(dir / "m.png", m);
  CHECK(torch::equal(io::read_mask(dir / "m.png", 16).values, m.values));

  CHECK_FALSE(io::read_rgb(dir / "missing.png").has_value());
  auto labels = torch::randint(0, 7, {16, 16}, torch::kUInt8);
  CHECK(torch::equal(io::resize_labels(labels, 16), labels));
}
