#include <doctest.h>

#include "dwt_oracle.hpp"
#include "test_util.hpp"
#include "wavedg/dwt.hpp"

using namespace wavedg;
using wavedg::testutil::random_tensor;

TEST_SUITE_BEGIN("dwt");

TEST_CASE("haar filters satisfy the orthonormality invariants") {
  const auto f = WaveletFilters::haar();
  f.validate();
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(f.phi == std::vector<double>{s, s});
  CHECK(f.psi == std::vector<double>{s, -s});
  CHECK_THROWS_AS(WaveletFilters({1.0, 1.0}, {1.0, -1.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(WaveletFilters({s, s}, {s}).validate(), std::invalid_argument);
}

TEST_CASE("constant input: detail subbands vanish, LL gain is 2") {
  Tensor x = Tensor::full({2, 6, 6}, 0.75);
  const auto sb = dwt_reference(x, WaveletFilters::haar());
  for (double v : sb.lh.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
  for (double v : sb.hl.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
  for (double v : sb.hh.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
  for (double v : sb.ll.values) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("hand-computed 2x2 block under the row-then-column convention") {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  const auto sb = dwt_reference(x, WaveletFilters::haar());
  CHECK(sb.ll.values[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(sb.lh.values[0] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(sb.hl.values[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(sb.hh.values[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("parseval energy conservation on even extents") {
  Rng rng(21);
  Tensor x = random_tensor({3, 8, 8}, rng, -2.0, 2.0);
  const auto sb = dwt_reference(x, WaveletFilters::haar());
  double in_e = 0.0, out_e = 0.0;
  for (double v : x.values) in_e += v * v;
  for (const Tensor* t : {&sb.ll, &sb.lh, &sb.hl, &sb.hh})
    for (double v : t->values) out_e += v * v;
  CHECK(std::abs(in_e - out_e) < 1e-6);
}

TEST_CASE("perfect reconstruction oracle on even extents") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({2, 10, 6}, rng, -3.0, 3.0);
    const auto f = WaveletFilters::haar();
    const Tensor rec = testutil::idwt_reference(dwt_reference(x, f), f);
    CHECK(testutil::max_abs_diff(x, rec) < 1e-5);
  }
}

TEST_CASE("odd extents use symmetric padding; 1x1 rejected") {
  Tensor x = Tensor::full({1, 3, 3}, 2.0);
  const auto sb = dwt_reference(x, WaveletFilters::haar());
  CHECK(sb.ll.shape == std::vector<int>{1, 2, 2});
  // the padded row/column replicates the edge, so a constant still maps to 2c
  for (double v : sb.ll.values) CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
  for (double v : sb.hh.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));

  CHECK_THROWS_WITH_AS(dwt_reference(Tensor::full({1, 1, 1}, 1.0), WaveletFilters::haar()),
                       doctest::Contains("at least 2x2"), std::invalid_argument);
}

TEST_SUITE_END();
