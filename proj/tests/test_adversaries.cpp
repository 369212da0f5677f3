#include "doctest_torch.hpp"

#include <set>

#include "refface/adversaries.hpp"

using namespace refface;
using namespace refface::adversaries;

TEST_CASE("patch discriminator output size") {
  torch::manual_seed(0);
  PatchDiscriminator d(std::vector<int64_t>{8, 16, 32});
  CHECK(d->forward(torch::randn({2, 3, 64, 64})).sizes() == torch::IntArrayRef({2, 1, 8, 8}));
  CHECK(d->forward(torch::randn({1, 3, 28, 30})).sizes() == torch::IntArrayRef({1, 1, 3, 3}));
}

TEST_CASE("discriminator scores are deterministic in eval mode") {
  torch::manual_seed(1);
  PatchDiscriminator d(std::vector<int64_t>{8, 16});
  d->eval();
  auto x = torch::randn({2, 3, 32, 32});
  CHECK(torch::equal(d->forward(x), d->forward(x)));
}

TEST_CASE("spectrally normalised weights have unit norm during training") {
  torch::manual_seed(2);
  PatchDiscriminator d(std::vector<int64_t>{16, 32, 64});
  auto opt = torch::optim::Adam(d->parameters(), torch::optim::AdamOptions(2e-4).betas({0.5, 0.999}));
  double worst = 0;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    auto loss = -d->forward(torch::randn({2, 3, 32, 32})).mean();
    for (const auto& layer : d->layers()) worst = std::max(worst, spectral_norm_estimate(layer->normalized_weight()));
    loss.backward();
    opt.step();
  }
  INFO("largest normalised sigma " << worst);
  CHECK(worst <= 1.0 + 1e-2);
  CHECK(worst >= 0.99);
  for (const auto& layer : d->layers())
    CHECK(spectral_norm_estimate(layer->normalized_weight()) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("spectral norm estimate matches a known matrix") {
  auto w = torch::diag(torch::tensor({3.0, 1.0, 0.5})).view({3, 3, 1, 1});
  CHECK(spectral_norm_estimate(w) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("crop sizes") {
  CHECK(crop_spec(Region::LeftEye, 256).height == 55);
  CHECK(crop_spec(Region::LeftEye, 256).width == 60);
  CHECK(crop_spec(Region::RightEye, 256).height == 55);
  CHECK(crop_spec(Region::Mouth, 256).height == 44);
  CHECK(crop_spec(Region::Mouth, 256).width == 90);
  CHECK(crop_spec(Region::LeftEye, 128).height == 28);
  CHECK(crop_spec(Region::LeftEye, 128).width == 30);
  CHECK(crop_spec(Region::Mouth, 128).height == 22);
  CHECK(crop_spec(Region::Mouth, 128).width == 45);
}

TEST_CASE("crops centre on components and stay in bounds") {
  auto labels = torch::ones({2, 256, 256}, torch::kInt64);
  // Sample 0: eye centred at (100, 90), mouth at (180, 128).
  labels[0].slice(0, 98, 103).slice(1, 88, 93).fill_(seg_class::kLeftEye);
  labels[0].slice(0, 178, 183).slice(1, 126, 131).fill_(seg_class::kLip);
  // Sample 1: components hugging the corners.
  labels[1].slice(0, 0, 3).slice(1, 0, 3).fill_(seg_class::kLeftEye);
  labels[1].slice(0, 253, 256).slice(1, 253, 256).fill_(seg_class::kLip);
  auto boxes = crop_boxes(labels);
  CHECK(boxes[0][0][0].item<int64_t>() == 100 + 1 - 28);  // centroid 100.5 - 27.5
  CHECK(boxes[0][0][1].item<int64_t>() == 91 - 30);
  CHECK(boxes[0][2][0].item<int64_t>() == 181 - 22);
  CHECK(boxes[0][2][1].item<int64_t>() == 129 - 45);
  CHECK(boxes[1][0][0].item<int64_t>() == 0);
  CHECK(boxes[1][0][1].item<int64_t>() == 0);
  CHECK(boxes[1][2][0].item<int64_t>() == 256 - 44);
  CHECK(boxes[1][2][1].item<int64_t>() == 256 - 90);

  auto images = torch::randn({2, 3, 256, 256});
  auto crops = apply_crops(images, boxes);
  CHECK(crops[0].sizes() == torch::IntArrayRef({2, 3, 55, 60}));
  CHECK(crops[2].sizes() == torch::IntArrayRef({2, 3, 44, 90}));
  CHECK(torch::equal(crops[0][0], images[0].slice(1, 73, 128).slice(2, 61, 121)));

  // Paired crops: same boxes for real and generated images.
  auto fake = torch::randn({2, 3, 256, 256});
  auto real_crops = crop_components(images, labels);
  auto fake_crops = apply_crops(fake, boxes);
  CHECK(torch::equal(real_crops[1], crops[1]));
  CHECK(torch::equal(fake_crops[1][0], fake[0].narrow(1, boxes[0][1][0].item<int64_t>(), 55)
                                                 .narrow(2, boxes[0][1][1].item<int64_t>(), 60)));
}

TEST_CASE("local discriminators") {
  torch::manual_seed(3);
  LocalDiscriminators local(128, std::vector<int64_t>{8, 16});
  std::set<const void*> seen;
  size_t count = 0;
  for (auto r : kRegions) {
    for (const auto& p : local->at(r)->parameters()) {
      seen.insert(p.data_ptr());
      ++count;
    }
  }
  CHECK(seen.size() == count);
  CHECK(local->parameters().size() == count);

  local->eval();
  auto eye = torch::randn({2, 3, 28, 30}, torch::requires_grad());
  auto a = local->forward(eye, Region::LeftEye);
  CHECK(torch::equal(a, local->forward(eye, Region::LeftEye)));
  a.sum().backward();
  CHECK(torch::isfinite(eye.grad()).all().item<bool>());
  CHECK(eye.grad().abs().sum().item<double>() > 0);

  CHECK_THROWS_AS(local->forward(torch::randn({1, 3, 22, 45}), Region::LeftEye), std::invalid_argument);
  CHECK_NOTHROW(local->forward(torch::randn({1, 3, 22, 45}), Region::Mouth));
}
