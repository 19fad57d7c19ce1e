// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "naturalize/losses.hpp"
#include "naturalize/rng.hpp"
#include "support/gradcheck.hpp"

using namespace naturalize;

namespace {

TensorPtr<double> random_image(int s, RandomStream& rng, bool requires_grad = false) {
  auto t = make_tensor<double>({1, 3, s, s}, requires_grad);
  for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
  return t;
}

PerceptualNet<double> seeded_pnet_double(std::uint64_t seed) {
  PerceptualNet<double> net;
  RandomStream rng(derive_seed(seed, "perceptual-init"));
  for (auto& c : net.convs) {
    const int fan_in = c.w->shape[1] * c.w->shape[2] * c.w->shape[3];
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : c.w->data) v = rng.normal(0.0, std);
    std::fill(c.b->data.begin(), c.b->data.end(), 0.0);
  }
  return net;
}

}  // namespace

TEST_CASE("perceptual loss is zero on identical inputs and non-negative") {
  RandomStream rng(5);
  auto net = seeded_pnet_double(1);
  auto a = random_image(16, rng);
  CHECK(perceptual_loss<double>(nullptr, net, a, a)->data[0] == doctest::Approx(0.0));
  for (int i = 0; i < 5; ++i) {
    auto b = random_image(16, rng);
    auto c = random_image(16, rng);
    CHECK(perceptual_loss<double>(nullptr, net, b, c)->data[0] >= 0.0);
  }
}

TEST_CASE("perceptual loss is symmetric (pseudo-metric)") {
  RandomStream rng(6);
  auto net = seeded_pnet_double(2);
  auto a = random_image(16, rng);
  auto b = random_image(16, rng);
  const double ab = perceptual_loss<double>(nullptr, net, a, b)->data[0];
  const double ba = perceptual_loss<double>(nullptr, net, b, a)->data[0];
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
}

TEST_CASE("perceptual loss gradient w.r.t. the first image matches finite differences") {
  RandomStream rng(7);
  auto net = seeded_pnet_double(3);
  auto i1 = random_image(16, rng, true);
  auto i2 = random_image(16, rng);
  auto forward = [&]() { return perceptual_loss<double>(nullptr, net, i1, i2)->data[0]; };
  Tape<double> tape;
  auto loss = perceptual_loss<double>(&tape, net, i1, i2);
  backward(tape, loss);
  auto res = gradcheck::check_tensor(*i1, forward);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("perceptual net weights never receive gradients") {
  RandomStream rng(8);
  auto net = seeded_pnet_double(4);
  auto i1 = random_image(16, rng, true);
  auto i2 = random_image(16, rng);
  Tape<double> tape;
  auto loss = perceptual_loss<double>(&tape, net, i1, i2);
  backward(tape, loss);
  for (const auto& t : net.weight_tensors()) CHECK(t->grad.empty());
}

TEST_CASE("perceptual feature maps are deterministic") {
  RandomStream rng(9);
  auto net = seeded_pnet_double(5);
  auto a = random_image(16, rng);
  auto f1 = net.features(nullptr, a);
  auto f2 = net.features(nullptr, a);
  for (std::size_t i = 0; i < f1->numel(); ++i) CHECK(f1->data[i] == f2->data[i]);
}

TEST_CASE("adversarial loss values") {
  CHECK(adversarial_loss(1.0, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(adversarial_loss(1.0, 1) > 0.0);  // clamped to 1 - 1e-7
  CHECK(adversarial_loss(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(adversarial_loss(0.5, 0) == doctest::Approx(0.693147).epsilon(1e-5));
  CHECK(std::isfinite(adversarial_loss(0.0, 1)));
  CHECK(std::isfinite(adversarial_loss(1.0, 0)));
  CHECK_THROWS_AS(adversarial_loss(0.5, 2), ContractError);
}

TEST_CASE("total loss combination") {
  LossWeights w;
  w.alpha = 0.005;
  CHECK(total_loss(2.0, 1.0, w) == doctest::Approx(1.995).epsilon(1e-12));
  w.alpha = 0.0;
  CHECK(total_loss(3.25, 100.0, w) == doctest::Approx(3.25));
  CHECK(total_loss(0.0, 0.0, w) == doctest::Approx(0.0));
}

TEST_CASE("total loss is monotone in both arguments") {
  RandomStream rng(10);
  LossWeights w;
  for (int i = 0; i < 50; ++i) {
    w.alpha = rng.uniform(0.001, 0.999);
    const double lv = rng.uniform(0.0, 10.0), la = rng.uniform(0.0, 10.0);
    const double dv = rng.uniform(0.01, 1.0), da = rng.uniform(0.01, 1.0);
    CHECK(total_loss(lv + dv, la, w) > total_loss(lv, la, w));
    CHECK(total_loss(lv, la + da, w) > total_loss(lv, la, w));
  }
}

TEST_CASE("scaled gradient applies the exact Eq-style factor") {
  LossWeights w;
  w.alpha = 0.005;
  auto g = make_tensor<double>({4}, true);
  g->ensure_grad();
  g->grad = {1.0, -2.0, 3.0, 0.5};
  auto before = g->grad;
  std::vector<TensorPtr<double>> grads{g};

  SUBCASE("documented value 0.9975") {
    auto info = blackbox_scaled_gradient<double>(2.0, 1.0, grads, w);
    CHECK(info.scale == doctest::Approx(0.9975).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(g->grad[i] == doctest::Approx(before[i] * 0.9975).epsilon(1e-12));
  }
  SUBCASE("zero adversarial loss gives 1 - alpha") {
    auto info = blackbox_scaled_gradient<double>(2.0, 0.0, grads, w);
    CHECK(info.scale == doctest::Approx(1.0 - w.alpha).epsilon(1e-12));
  }
  SUBCASE("alpha = 0 leaves the gradient unchanged") {
    w.alpha = 0.0;
    auto info = blackbox_scaled_gradient<double>(2.0, 57.0, grads, w);
    CHECK(info.scale == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t i = 0; i < 4; ++i) CHECK(g->grad[i] == before[i]);
  }
}

TEST_CASE("scaled gradient keeps direction collinear and positive") {
  RandomStream rng(11);
  LossWeights w;
  for (int i = 0; i < 50; ++i) {
    w.alpha = rng.uniform(0.001, 0.999);
    const double lv = rng.uniform(1e-3, 10.0), la = rng.uniform(0.0, 10.0);
    auto g = make_tensor<double>({8}, true);
    g->ensure_grad();
    for (auto& v : g->grad) v = rng.normal();
    auto before = g->grad;
    std::vector<TensorPtr<double>> grads{g};
    auto info = blackbox_scaled_gradient<double>(lv, la, grads, w);
    CHECK(info.scale > 0.0);
    // cosine similarity is exactly +1: same direction, positive scale
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      dot += g->grad[j] * before[j];
      na += g->grad[j] * g->grad[j];
      nb += before[j] * before[j];
    }
    CHECK(dot / std::sqrt(na * nb) == doctest::Approx(1.0).epsilon(1e-12));
    // scale > 1 iff l_adv > l_vgg
    if (la > lv) CHECK(info.scale > 1.0);
    if (std::abs(la - lv) < 1e-12) CHECK(info.scale == doctest::Approx(1.0));
    if (la < lv - 1e-12) CHECK(info.scale < 1.0);
  }
}

TEST_CASE("scaled gradient skips scaling below the perceptual floor") {
  LossWeights w;
  auto g = make_tensor<double>({2}, true);
  g->ensure_grad();
  g->grad = {0.25, -0.75};
  auto before = g->grad;
  std::vector<TensorPtr<double>> grads{g};
  auto info = blackbox_scaled_gradient<double>(1e-12, 5.0, grads, w);
  CHECK(info.skipped);
  CHECK(g->grad == before);
}

TEST_CASE("loss weights validate their range") {
  LossWeights w;
  w.alpha = 1.5;
  CHECK_THROWS_AS(w.validate(), ContractError);
  w.alpha = 0.005;
  CHECK_NOTHROW(w.validate());
}

TEST_CASE("perceptual weights round-trip through the PNET file") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "nz_losses_test";
  fs::create_directories(dir);
  const std::string path = (dir / "weights.pnet").string();

  auto net = PerceptualNetF::seeded(42);
  save_perceptual(net, path);
  auto back = load_perceptual(path);
  auto a = net.weight_tensors();
  auto b = back.weight_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->shape == b[i]->shape);
    for (std::size_t j = 0; j < a[i]->numel(); ++j) CHECK(a[i]->data[j] == b[i]->data[j]);
  }
  CHECK_FALSE(back.weight_tensors()[0]->requires_grad);

  SUBCASE("wrong magic is rejected") {
    const std::string bad = (dir / "bad.pnet").string();
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fwrite("NOPE\x01\x00\x00\x00", 1, 8, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_perceptual(bad), FormatError);
  }
  fs::remove_all(dir);
}
