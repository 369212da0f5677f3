#include "doctest_torch.hpp"

#include <cmath>

#include "refface/objectives.hpp"

using namespace refface;
using namespace refface::objectives;

namespace {

LossTerms unit_terms() {
  auto one = torch::ones({});
  return LossTerms{one, one, one, one, one, one};
}

// Scalar-loop cross entropy of one probability map against nearest labels.
double loop_cross_entropy(const torch::Tensor& probs, const torch::Tensor& labels) {
  auto p = probs.to(torch::kFloat64).contiguous();
  auto l = downsample_labels(labels, p.size(-1)).contiguous();
  auto pa = p.accessor<double, 4>();
  auto la = l.accessor<int64_t, 3>();
  double sum = 0;
  int64_t n = 0;
  for (int64_t b = 0; b < p.size(0); ++b)
    for (int64_t y = 0; y < p.size(2); ++y)
      for (int64_t x = 0; x < p.size(3); ++x, ++n) sum -= std::log(pa[b][la[b][y][x]][y][x]);
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("loss weights") {
  LossWeights w;
  CHECK(w.reconstruction == 20.0);
  CHECK(w.perceptual == 10.0);
  CHECK(w.identity == 3.0);
  CHECK(w.segmentation == 2.5);
}

TEST_CASE("total objective with unit terms") {
  auto inpaint = total_loss(unit_terms(), TrainingMode::Inpainting);
  CHECK(inpaint.report.total == 37.5);
  CHECK(inpaint.total.item<double>() == 37.5);
  CHECK(inpaint.report.gate == 1.0);
  for (auto mode : {TrainingMode::Segmentation, TrainingMode::StyleExtracting}) {
    auto r = total_loss(unit_terms(), mode);
    CHECK(r.report.total == 36.5);
    CHECK(r.report.gate == 0.0);
  }
  auto terms = unit_terms();
  terms.adv_local = torch::Tensor();
  CHECK(total_loss(terms, TrainingMode::Segmentation).report.total == 36.5);
}

TEST_CASE("local adversarial gate") {
  CHECK(local_adversarial_gate(TrainingMode::Inpainting) == 1.0);
  CHECK(local_adversarial_gate(TrainingMode::Segmentation) == 0.0);
  CHECK(local_adversarial_gate(TrainingMode::StyleExtracting) == 0.0);
}

TEST_CASE("reconstruction loss") {
  auto x = torch::rand({2, 3, 8, 8});
  CHECK(recon_l1(x, x).item<float>() == 0.0f);
  CHECK(recon_l1(x + 0.5, x).item<float>() == doctest::Approx(0.5));
  auto a = torch::randn({2, 3, 4, 4}, torch::kFloat64), b = torch::randn({2, 3, 4, 4}, torch::kFloat64);
  auto fa = a.flatten(), fb = b.flatten();
  double sum = 0;
  for (int64_t i = 0; i < fa.numel(); ++i) sum += std::abs(fa[i].item<double>() - fb[i].item<double>());
  CHECK(recon_l1(a, b).item<double>() == doctest::Approx(sum / static_cast<double>(fa.numel())).epsilon(1e-12));
}

TEST_CASE("perceptual loss") {
  auto net = perception::make_perceptual({});
  auto x = torch::rand({1, 3, 32, 32}) * 2 - 1;
  auto y = torch::rand({1, 3, 32, 32}) * 2 - 1;
  CHECK(perceptual_loss(x, x, *net).item<float>() == 0.0f);
  CHECK(perceptual_loss(x, y, *net).item<float>() > 0.0f);

  std::vector<torch::Tensor> fa{torch::zeros({1, 2, 2, 2}), torch::zeros({1, 1, 2, 2})};
  std::vector<torch::Tensor> fb{torch::full({1, 2, 2, 2}, 0.5), torch::full({1, 1, 2, 2}, 1.5)};
  std::vector<torch::Tensor> fb2{torch::full({1, 2, 2, 2}, 1.0), torch::full({1, 1, 2, 2}, 3.0)};
  const double once = perceptual_loss(fa, fb).item<double>();
  CHECK(once == doctest::Approx(2.0));
  CHECK(perceptual_loss(fa, fb2).item<double>() == doctest::Approx(2 * once));
  CHECK_THROWS_AS(perceptual_loss(fa, std::vector<torch::Tensor>{fb[0]}), std::invalid_argument);
}

TEST_CASE("identity loss trivial points") {
  auto e = torch::tensor({{1.0, 0.0, 0.0}});
  CHECK(identity_loss_from_embeddings(e, e).item<double>() == 0.0);
  CHECK(identity_loss_from_embeddings(e, torch::tensor({{0.0, 1.0, 0.0}})).item<double>() == 1.0);
  CHECK(identity_loss_from_embeddings(e, -e).item<double>() == 2.0);

  auto embedder = perception::make_embedder({});
  auto img = torch::rand({2, 3, 64, 64}) * 2 - 1;
  CHECK(identity_loss(img, img, *embedder).item<double>() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("segmentation loss") {
  auto labels = torch::randint(0, 7, {2, 16, 16}, torch::kInt64);
  SUBCASE("confident correct prediction") {
    std::vector<torch::Tensor> probs;
    for (int64_t size : {8, 16}) {
      auto l = downsample_labels(labels, size);
      auto logits = torch::full({2, 7, size, size}, -20.0).scatter(1, l.unsqueeze(1), 20.0);
      probs.push_back(torch::softmax(logits, 1));
    }
    CHECK(segmentation_loss(probs, labels).item<double>() < 1e-3);
  }
  SUBCASE("uniform prediction costs ln N per branch") {
    std::vector<torch::Tensor> probs{torch::full({2, 7, 8, 8}, 1.0 / 7), torch::full({2, 7, 16, 16}, 1.0 / 7)};
    CHECK(segmentation_loss(probs, labels).item<double>() == doctest::Approx(2 * std::log(7.0)).epsilon(1e-6));
  }
  SUBCASE("random logits match a scalar loop") {
    torch::manual_seed(0);
    std::vector<torch::Tensor> probs{torch::softmax(torch::randn({2, 7, 8, 8}, torch::kFloat64), 1),
                                     torch::softmax(torch::randn({2, 7, 16, 16}, torch::kFloat64), 1)};
    const double expected = loop_cross_entropy(probs[0], labels) + loop_cross_entropy(probs[1], labels);
    CHECK(std::abs(segmentation_loss(probs, labels).item<double>() - expected) < 1e-6);
  }
}

TEST_CASE("hinge losses") {
  auto ones = torch::ones({1, 1, 4, 4});
  auto zeros = torch::zeros({1, 1, 4, 4});
  CHECK(adv_hinge_d(ones, -ones).item<float>() == 0.0f);
  CHECK(adv_hinge_d(zeros, zeros).item<float>() == 2.0f);
  CHECK(adv_hinge_g(zeros).item<float>() == 0.0f);
  CHECK(adv_hinge_g(3 * ones).item<float>() == -3.0f);
}

TEST_CASE("local adversarial sums") {
  auto z = torch::zeros({1, 1, 2, 2});
  CHECK(local_adv_d({z, z, z}, {z, z, z}).item<float>() == 6.0f);

  torch::manual_seed(1);
  std::array<torch::Tensor, 3> real{torch::randn({2, 1, 3, 3}), torch::randn({2, 1, 2, 5}), torch::randn({2, 1, 1, 4})};
  std::array<torch::Tensor, 3> fake{torch::randn({2, 1, 3, 3}), torch::randn({2, 1, 2, 5}), torch::randn({2, 1, 1, 4})};
  const double sum = adv_hinge_d(real[0], fake[0]).item<double>() + adv_hinge_d(real[1], fake[1]).item<double>() +
                     adv_hinge_d(real[2], fake[2]).item<double>();
  CHECK(local_adv_d(real, fake).item<double>() == doctest::Approx(sum));
  const double g = adv_hinge_g(fake[0]).item<double>() + adv_hinge_g(fake[1]).item<double>() +
                   adv_hinge_g(fake[2]).item<double>();
  CHECK(local_adv_g(fake).item<double>() == doctest::Approx(g));

  // Equal scores on both sides still pay both hinge terms.
  auto s = torch::full({1, 1, 2, 2}, 0.25);
  CHECK(adv_hinge_d(s, s).item<float>() == doctest::Approx(0.75 + 1.25));
}
