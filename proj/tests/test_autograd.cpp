#include <doctest.h>

#include "test_util.hpp"
#include "wavedg/autograd.hpp"

using namespace wavedg;
using wavedg::testutil::grad_check;
using wavedg::testutil::random_tensor;

TEST_SUITE_BEGIN("autograd");

namespace {
constexpr double kTol = 1e-6;  // elementary ops at h=1e-4 sit well below this
}

TEST_CASE("elementwise ops: values and gradients") {
  Rng rng(101);
  auto a = ag::param(random_tensor({3, 4}, rng, 0.2, 1.5));
  auto b = ag::param(random_tensor({3, 4}, rng, 0.2, 1.5));

  SUBCASE("add/sub/mul/divide") {
    for (auto fn : std::vector<std::function<ag::NodePtr()>>{
             [&] { return ag::sum_all(ag::add(a, b)); },
             [&] { return ag::sum_all(ag::sub(a, b)); },
             [&] { return ag::sum_all(ag::mul(a, b)); },
             [&] { return ag::sum_all(ag::divide(a, b)); }}) {
      auto r = grad_check(fn, {a, b});
      CHECK(r.max_rel_err < kTol);
    }
  }
  SUBCASE("affine, relu, sigmoid, log, pow, clamp") {
    auto r1 = grad_check([&] { return ag::sum_all(ag::affine(a, -2.5, 0.75)); }, {a});
    CHECK(r1.max_rel_err < kTol);
    auto r2 = grad_check([&] { return ag::sum_all(ag::relu(ag::affine(a, 1.0, -0.8))); }, {a});
    CHECK(r2.max_rel_err < 1e-3);  // kink crossings limit FD accuracy
    auto r3 = grad_check([&] { return ag::sum_all(ag::sigmoid(a)); }, {a});
    CHECK(r3.max_rel_err < kTol);
    auto r4 = grad_check([&] { return ag::sum_all(ag::log(a)); }, {a});
    CHECK(r4.max_rel_err < kTol);
    auto r5 = grad_check([&] { return ag::sum_all(ag::pow_const(a, 2.0)); }, {a});
    CHECK(r5.max_rel_err < kTol);
    auto r6 = grad_check([&] { return ag::sum_all(ag::pow_const(a, 0.0)); }, {a});
    CHECK(r6.max_rel_err < kTol);
    auto r7 = grad_check([&] { return ag::sum_all(ag::clamp(a, 0.3, 1.2)); }, {a});
    CHECK(r7.max_rel_err < 1e-3);
  }
  SUBCASE("scale_by scalar node") {
    auto s = ag::param(Tensor::scalar(0.73));
    auto r = grad_check([&] { return ag::sum_all(ag::scale_by(a, s)); }, {a, s});
    CHECK(r.max_rel_err < kTol);
  }
  SUBCASE("mean_all and reshape") {
    auto r = grad_check([&] { return ag::mean_all(ag::reshape(ag::mul(a, a), {12})); }, {a});
    CHECK(r.max_rel_err < kTol);
  }
}

TEST_CASE("matrix ops: matmul, transpose, softmax, layernorm") {
  Rng rng(102);
  auto a = ag::param(random_tensor({4, 3}, rng));
  auto b = ag::param(random_tensor({3, 5}, rng));

  auto r1 = grad_check([&] { return ag::sum_all(ag::mul(ag::matmul(a, b), ag::matmul(a, b))); },
                       {a, b});
  CHECK(r1.max_rel_err < kTol);

  auto r2 = grad_check([&] { return ag::sum_all(ag::mul(ag::transpose(a), ag::transpose(a))); }, {a});
  CHECK(r2.max_rel_err < kTol);

  // Nonuniform weights make the softmax jacobian visible.
  Rng rng2(103);
  auto w = ag::constant(random_tensor({4, 3}, rng2, 0.5, 2.0));
  auto r3 = grad_check([&] { return ag::sum_all(ag::mul(ag::softmax_rows(a), w)); }, {a});
  CHECK(r3.max_rel_err < kTol);

  auto gamma = ag::param(random_tensor({3}, rng2, 0.5, 1.5));
  auto beta = ag::param(random_tensor({3}, rng2, -0.5, 0.5));
  auto r4 = grad_check(
      [&] { return ag::sum_all(ag::mul(ag::layer_norm_rows(a, gamma, beta), w)); },
      {a, gamma, beta});
  CHECK(r4.max_rel_err < 1e-5);

  SUBCASE("softmax rows sum to one") {
    auto s = ag::softmax_rows(a);
    for (int i = 0; i < 4; ++i) {
      double z = 0.0;
      for (int j = 0; j < 3; ++j) z += s->value.at2(i, j);
      CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("structure ops: concat, slice, broadcast adds, gap, token layout") {
  Rng rng(104);
  auto x = ag::param(random_tensor({2, 3, 3}, rng));
  auto y = ag::param(random_tensor({3, 3, 3}, rng));
  auto v = ag::param(random_tensor({2}, rng));
  auto m = ag::param(random_tensor({4, 5}, rng));
  auto rowv = ag::param(random_tensor({5}, rng));

  auto r1 = grad_check([&] { return ag::sum_all(ag::mul(ag::concat_channels(x, y),
                                                        ag::concat_channels(x, y))); },
                       {x, y});
  CHECK(r1.max_rel_err < kTol);

  auto r2 = grad_check([&] { return ag::sum_all(ag::mul(ag::add_channel_bias(x, v),
                                                        ag::add_channel_bias(x, v))); },
                       {x, v});
  CHECK(r2.max_rel_err < kTol);

  auto r3 = grad_check([&] { return ag::sum_all(ag::mul(ag::add_row_vector(m, rowv),
                                                        ag::add_row_vector(m, rowv))); },
                       {m, rowv});
  CHECK(r3.max_rel_err < kTol);

  auto r4 = grad_check([&] { return ag::sum_all(ag::mul(ag::gap_spatial(x), v)); }, {x, v});
  CHECK(r4.max_rel_err < kTol);

  auto r5 = grad_check([&] { return ag::sum_all(ag::mul(ag::slice_rows(m, 1, 3),
                                                        ag::slice_rows(m, 1, 3))); },
                       {m});
  CHECK(r5.max_rel_err < kTol);

  SUBCASE("chw_to_rows round trips") {
    auto rows = ag::chw_to_rows(x);
    CHECK(rows->value.shape == std::vector<int>{9, 2});
    auto back = ag::rows_to_chw(rows, 2, 3, 3);
    CHECK(testutil::max_abs_diff(back->value, x->value) == 0.0);
    auto r = grad_check(
        [&] { return ag::sum_all(ag::mul(ag::chw_to_rows(x), ag::chw_to_rows(x))); }, {x});
    CHECK(r.max_rel_err < kTol);
  }
  SUBCASE("concat_rows") {
    auto a2 = ag::param(random_tensor({2, 5}, rng));
    auto r = grad_check([&] { return ag::sum_all(ag::mul(ag::concat_rows(m, a2),
                                                         ag::concat_rows(m, a2))); },
                        {m, a2});
    CHECK(r.max_rel_err < kTol);
  }
}

TEST_CASE("conv ops: values and gradients") {
  Rng rng(105);
  auto x = ag::param(random_tensor({2, 5, 5}, rng));
  auto w = ag::param(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  auto b = ag::param(random_tensor({3}, rng, -0.2, 0.2));

  SUBCASE("conv2d shape and gradient") {
    auto out = ag::conv2d(x, w, b, 1, 1);
    CHECK(out->value.shape == std::vector<int>{3, 5, 5});
    auto out2 = ag::conv2d(x, w, b, 2, 1);
    CHECK(out2->value.shape == std::vector<int>{3, 3, 3});
    auto r = grad_check(
        [&] {
          auto o = ag::conv2d(x, w, b, 1, 1);
          return ag::sum_all(ag::mul(o, o));
        },
        {x, w, b});
    CHECK(r.max_rel_err < 1e-5);
  }
  SUBCASE("conv2d naive cross-check") {
    auto out = ag::conv2d(x, w, b, 1, 1);
    // independent direct convolution
    for (int oc = 0; oc < 3; ++oc)
      for (int oy = 0; oy < 5; ++oy)
        for (int ox = 0; ox < 5; ++ox) {
          double acc = b->value[oc];
          for (int ic = 0; ic < 2; ++ic)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy + ky - 1, ix = ox + kx - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                acc += x->value.at3(ic, iy, ix) *
                       w->value.values[((oc * 2 + ic) * 3 + ky) * 3 + kx];
              }
          CHECK(out->value.at3(oc, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
        }
  }
  SUBCASE("conv_transpose2d shape, adjoint identity, gradient") {
    auto wt = ag::param(random_tensor({2, 3, 2, 2}, rng, -0.5, 0.5));
    auto bt = ag::param(random_tensor({3}, rng, -0.2, 0.2));
    auto out = ag::conv_transpose2d(x, wt, bt, 2);
    CHECK(out->value.shape == std::vector<int>{3, 10, 10});
    auto r = grad_check(
        [&] {
          auto o = ag::conv_transpose2d(x, wt, bt, 2);
          return ag::sum_all(ag::mul(o, o));
        },
        {x, wt, bt});
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("bilinear upsample: constants stay constant, gradient") {
  Rng rng(106);
  auto c = ag::constant(Tensor::full({1, 3, 3}, 0.7));
  auto up = ag::bilinear_upsample(c, 9, 9);
  for (double v : up->value.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

  auto x = ag::param(random_tensor({2, 4, 4}, rng));
  auto r = grad_check(
      [&] {
        auto o = ag::bilinear_upsample(x, 7, 9);
        return ag::sum_all(ag::mul(o, o));
      },
      {x});
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("no-grad guard detaches and retains no graph") {
  Rng rng(107);
  auto a = ag::param(random_tensor({2, 2}, rng));
  ag::NodePtr out;
  {
    ag::NoGradGuard ng;
    out = ag::mul(a, a);
  }
  CHECK_FALSE(out->requires_grad);
  CHECK(out->parents.empty());
}

TEST_CASE("backward accumulates across shared subgraphs") {
  auto a = ag::param(Tensor::scalar(3.0));
  auto sq = ag::mul(a, a);
  auto root = ag::add(sq, sq);  // d/da (2a^2) = 4a = 12
  ag::backward(root);
  CHECK(a->grad.values[0] == doctest::Approx(12.0));
}

TEST_SUITE_END();
