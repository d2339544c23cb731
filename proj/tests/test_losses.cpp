#include <doctest.h>

#include "test_util.hpp"
#include "wavedg/losses.hpp"

using namespace wavedg;
using wavedg::testutil::grad_check;

TEST_SUITE_BEGIN("losses");

namespace {

Tensor random_mask(std::vector<int> shape, Rng& rng, double p = 0.3) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) v = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

// probabilities kept away from the 0.5 decision boundary so the detached
// IoU target is locally constant under finite differences
Tensor random_probs_off_boundary(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) {
    const double u = rng.uniform(0.08, 0.38);
    v = rng.uniform() < 0.5 ? u : 1.0 - u;
  }
  return t;
}

}  // namespace

TEST_CASE("dice loss: perfect, disjoint, half overlap") {
  Tensor y({4, 4});
  for (int i = 0; i < 8; ++i) y.values[i] = 1.0;

  auto p_perfect = ag::constant(y);
  CHECK(dice_loss(p_perfect, y, 1e-6)->item() == doctest::Approx(0.0).epsilon(1e-6));

  Tensor disjoint({4, 4});
  for (int i = 8; i < 16; ++i) disjoint.values[i] = 1.0;
  CHECK(dice_loss(ag::constant(disjoint), y, 1e-6)->item() == doctest::Approx(1.0).epsilon(1e-6));

  // |p ∩ y| = 5, |p| = |y| = 10 -> dice 0.5
  Tensor y2({5, 4}), p2({5, 4});
  for (int i = 0; i < 10; ++i) y2.values[i] = 1.0;
  for (int i = 5; i < 15; ++i) p2.values[i] = 1.0;
  CHECK(dice_loss(ag::constant(p2), y2, 1e-6)->item() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("focal loss: confident positive, gamma=0 is BCE, single-pixel value") {
  Tensor y({1, 1}, {1.0});
  auto conf = ag::constant(Tensor({1, 1}, {1.0 - 1e-7}));
  CHECK(focal_loss(conf, y, 2.0)->item() < 1e-13);

  SUBCASE("gamma = 0 reduces to cross-entropy") {
    Rng rng(31);
    Tensor probs = random_probs_off_boundary({6, 7}, rng);
    Tensor mask = random_mask({6, 7}, rng);
    const double focal = focal_loss(ag::constant(probs), mask, 0.0)->item();
    double bce = 0.0;
    for (std::size_t i = 0; i < probs.values.size(); ++i) {
      const double p = std::min(1.0 - 1e-7, std::max(1e-7, probs.values[i]));
      bce += mask.values[i] != 0.0 ? -std::log(p) : -std::log(1.0 - p);
    }
    bce /= static_cast<double>(probs.values.size());
    CHECK(std::abs(focal - bce) < 1e-8);
  }
  SUBCASE("single positive pixel at p=0.5, gamma=2") {
    auto half = ag::constant(Tensor({1, 1}, {0.5}));
    CHECK(focal_loss(half, y, 2.0)->item() == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-9));
  }
}

TEST_CASE("iou mse loss") {
  auto pred = ag::constant(Tensor({1, 1}, {0.8}));
  CHECK(iou_mse_loss(pred, 0.8)->item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(iou_mse_loss(pred, 0.5)->item() == doctest::Approx(0.09).epsilon(1e-12));

  Rng rng(32);
  Tensor probs = random_probs_off_boundary({5, 5}, rng);
  Tensor mask = random_mask({5, 5}, rng);
  const double s = actual_iou(probs, mask, 1e-6);
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < probs.values.size(); ++i) {
    const bool p = probs.values[i] > 0.5, g = mask.values[i] != 0.0;
    inter += p && g;
    uni += p || g;
  }
  CHECK(s == doctest::Approx((inter + 1e-6) / (uni + 1e-6)).epsilon(1e-10));
}

TEST_CASE("total loss equals the weighted sum of its parts") {
  Rng rng(33);
  Tensor probs = random_probs_off_boundary({6, 6}, rng);
  Tensor mask = random_mask({6, 6}, rng);
  LossConfig cfg;  // 0.8 / 0.2 / gamma 2 defaults
  auto p = ag::constant(probs);
  auto s_hat = ag::constant(Tensor({1, 1}, {0.42}));

  const double total = total_loss(p, s_hat, mask, cfg)->item();
  const double dice = dice_loss(p, mask, cfg.smooth)->item();
  const double focal = focal_loss(p, mask, cfg.gamma)->item();
  const double mse = iou_mse_loss(s_hat, actual_iou(probs, mask, cfg.smooth))->item();
  CHECK(total == doctest::Approx(0.8 * dice + 0.2 * focal + mse).epsilon(1e-12));

  SUBCASE("perfect prediction, dice-only weights") {
    LossConfig c2;
    c2.lambda_dice = 1.0;
    c2.lambda_focal = 0.0;
    auto perfect = ag::constant(mask);
    auto s1 = ag::constant(Tensor({1, 1}, {1.0}));
    CHECK(total_loss(perfect, s1, mask, c2)->item() < 1e-4);
  }
}

TEST_CASE("total loss gradient w.r.t. probabilities matches finite differences") {
  Rng rng(34);
  auto p = ag::param(random_probs_off_boundary({4, 4}, rng));
  auto s_hat = ag::param(Tensor({1, 1}, {0.37}));
  Tensor mask = random_mask({4, 4}, rng);
  LossConfig cfg;
  auto r = grad_check([&] { return total_loss(p, s_hat, mask, cfg); }, {p, s_hat});
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("total loss non-increasing as p moves toward y") {
  Rng rng(35);
  Tensor start = random_probs_off_boundary({5, 5}, rng);
  Tensor mask = random_mask({5, 5}, rng);
  LossConfig cfg;
  auto s_hat = ag::constant(Tensor({1, 1}, {0.5}));
  double prev = std::numeric_limits<double>::infinity();
  for (double t : {0.0, 0.5, 0.9}) {
    Tensor p(start.shape);
    for (std::size_t i = 0; i < p.values.size(); ++i)
      p.values[i] = (1 - t) * start.values[i] + t * mask.values[i];
    const double loss = total_loss(ag::constant(p), s_hat, mask, cfg)->item();
    CHECK(loss <= prev + 1e-12);
    prev = loss;
  }
}

TEST_CASE("metrics: perfect, derived counts, dice-iou identity, empty cases") {
  Tensor g({4, 4});
  for (int i = 0; i < 6; ++i) g.values[i] = 1.0;
  auto m_perfect = compute_metrics(g, g);
  CHECK(m_perfect.dice == doctest::Approx(100.0));
  CHECK(m_perfect.iou == doctest::Approx(100.0));
  CHECK(m_perfect.f1 == doctest::Approx(100.0));

  // |P∩G|=5, |P|=10, |G|=10
  Tensor y2({5, 4}), p2({5, 4});
  for (int i = 0; i < 10; ++i) y2.values[i] = 1.0;
  for (int i = 5; i < 15; ++i) p2.values[i] = 1.0;
  auto m = compute_metrics(p2, y2);
  CHECK(m.dice == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(m.iou == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(50.0).epsilon(1e-12));

  SUBCASE("dice equals 2*iou/(1+iou) and f1 equals dice on random masks") {
    Rng rng(36);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor a({8, 8}), b({8, 8});
      for (auto& v : a.values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      for (auto& v : b.values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      // count-level identity |P|+|G| == |P∪G|+|P∩G| makes the relation exact
      std::int64_t np = 0, ng = 0, inter = 0;
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        np += a.values[i] != 0.0;
        ng += b.values[i] != 0.0;
        inter += a.values[i] != 0.0 && b.values[i] != 0.0;
      }
      const std::int64_t uni = np + ng - inter;
      REQUIRE(np + ng == uni + inter);
      auto mm = compute_metrics(a, b);
      if (np + ng > 0) {
        const double dice_from_iou = 200.0 * (mm.iou / 100.0) / (1.0 + mm.iou / 100.0);
        CHECK(mm.dice == doctest::Approx(dice_from_iou).epsilon(1e-9));
        if (np > 0 && ng > 0) CHECK(mm.f1 == doctest::Approx(mm.dice).epsilon(1e-9));
      }
    }
  }
  SUBCASE("empty vs empty is perfect; empty vs nonempty is zero overlap") {
    Tensor e({3, 3}), f({3, 3});
    auto me = compute_metrics(e, f);
    CHECK(me.dice == doctest::Approx(100.0));
    f.values[0] = 1.0;
    auto mz = compute_metrics(e, f);
    CHECK(mz.dice == doctest::Approx(0.0));
    CHECK(mz.iou == doctest::Approx(0.0));
  }
  SUBCASE("non-binary mask rejected") {
    Tensor bad({2, 2}, {0.0, 0.5, 1.0, 0.0});
    CHECK_THROWS_AS(compute_metrics(bad, Tensor({2, 2})), std::invalid_argument);
  }
}

TEST_SUITE_END();
