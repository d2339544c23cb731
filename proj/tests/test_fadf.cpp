#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "test_util.hpp"
#include "wavedg/dwt.hpp"
#include "wavedg/fadf.hpp"

using namespace wavedg;
using wavedg::testutil::max_abs_diff;
using wavedg::testutil::random_tensor;

TEST_SUITE_BEGIN("fadf");

namespace {

// Parameter-free decomposer for cross-checks: reference Haar subbands,
// LL as the low component and HH as the high component.
std::pair<Tensor, Tensor> haar_decomposer(const Tensor& f) {
  const auto sb = dwt_reference(f, WaveletFilters::haar());
  return {sb.ll, sb.hh};
}

FrequencyPrototype proto_of(std::vector<double> low, std::vector<double> high, int id = 0) {
  FrequencyPrototype p;
  p.domain_id = id;
  p.sample_count = 1;
  p.low = std::move(low);
  p.high = std::move(high);
  return p;
}

}  // namespace

TEST_CASE("compute_prototype: GAP of constants, idempotent mean, brute-force oracle") {
  SUBCASE("constant per-channel decomposition gives that constant") {
    Tensor f({2, 4, 4});
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) {
        f.at3(0, h, w) = 0.3;
        f.at3(1, h, w) = -1.2;
      }
    // identity decomposer: low = high = feature
    Decomposer ident = [](const Tensor& x) { return std::make_pair(x, x); };
    auto p = compute_prototype({f}, 3, ident);
    CHECK(p.domain_id == 3);
    CHECK(p.sample_count == 1);
    CHECK(p.low[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(p.low[1] == doctest::Approx(-1.2).epsilon(1e-12));
  }
  SUBCASE("two identical samples equal the single-sample prototype") {
    Rng rng(51);
    Tensor f = random_tensor({2, 4, 4}, rng);
    auto p1 = compute_prototype({f}, 0, haar_decomposer);
    auto p2 = compute_prototype({f, f}, 0, haar_decomposer);
    CHECK(p2.sample_count == 2);
    for (std::size_t i = 0; i < p1.low.size(); ++i) {
      CHECK(p2.low[i] == doctest::Approx(p1.low[i]).epsilon(1e-12));
      CHECK(p2.high[i] == doctest::Approx(p1.high[i]).epsilon(1e-12));
    }
  }
  SUBCASE("three random features match an independent loop oracle within 1e-6") {
    Rng rng(52);
    std::vector<Tensor> feats;
    for (int i = 0; i < 3; ++i) feats.push_back(random_tensor({2, 4, 4}, rng));
    auto p = compute_prototype(feats, 1, haar_decomposer);

    for (int c = 0; c < 2; ++c) {
      double lo_acc = 0.0, hi_acc = 0.0;
      for (const auto& f : feats) {
        auto [lo, hi] = haar_decomposer(f);
        double lo_m = 0.0, hi_m = 0.0;
        for (int h = 0; h < lo.shape[1]; ++h)
          for (int w = 0; w < lo.shape[2]; ++w) {
            lo_m += lo.at3(c, h, w);
            hi_m += hi.at3(c, h, w);
          }
        lo_acc += lo_m / (lo.shape[1] * lo.shape[2]);
        hi_acc += hi_m / (hi.shape[1] * hi.shape[2]);
      }
      CHECK(std::abs(p.low[c] - lo_acc / 3.0) < 1e-6);
      CHECK(std::abs(p.high[c] - hi_acc / 3.0) < 1e-6);
    }
  }
  SUBCASE("sample order does not change the prototype") {
    Rng rng(53);
    std::vector<Tensor> feats;
    for (int i = 0; i < 5; ++i) feats.push_back(random_tensor({3, 4, 4}, rng, -4.0, 4.0));
    auto fwd = compute_prototype(feats, 0, haar_decomposer);
    std::reverse(feats.begin(), feats.end());
    auto rev = compute_prototype(feats, 0, haar_decomposer);
    for (std::size_t i = 0; i < fwd.low.size(); ++i) {
      CHECK(std::abs(fwd.low[i] - rev.low[i]) < 1e-12);
      CHECK(std::abs(fwd.high[i] - rev.high[i]) < 1e-12);
    }
  }
  SUBCASE("empty list and channel mismatch rejected") {
    CHECK_THROWS_AS(compute_prototype({}, 0, haar_decomposer), std::invalid_argument);
    Rng rng(54);
    CHECK_THROWS_AS(compute_prototype({random_tensor({2, 4, 4}, rng), random_tensor({3, 4, 4}, rng)},
                                      0, haar_decomposer),
                    std::invalid_argument);
  }
}

TEST_CASE("similarity: self, orthogonal, mixed, zero-norm error") {
  auto a = proto_of({1, 0, 0, 0}, {0, 1, 0, 0});
  CHECK(similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  auto orth = proto_of({0, 1, 0, 0}, {0, 0, 1, 0});
  CHECK(similarity(a, orth) == doctest::Approx(0.0).epsilon(1e-12));

  // low parallel (cos 1), high orthogonal (cos 0) -> 0.5
  auto mixed = proto_of({2, 0, 0, 0}, {0, 0, 0, 1});
  CHECK(similarity(a, mixed) == doctest::Approx(0.5).epsilon(1e-12));

  auto dead = proto_of({0, 0, 0, 0}, {0, 1, 0, 0});
  CHECK_THROWS_WITH_AS(similarity(a, dead), doctest::Contains("domain.low"), std::domain_error);
  CHECK_THROWS_WITH_AS(similarity(dead, a), doctest::Contains("test.low"), std::domain_error);
}

TEST_CASE("fusion_weights: uniform, derived softmax value, sharpness limit, argmax invariance") {
  SUBCASE("equal similarities give 1/K for any temperature") {
    for (double tau : {0.01, 0.1, 0.5, 1.0}) {
      auto dw = fusion_weights({0.4, 0.4, 0.4, 0.4}, tau);
      for (double w : dw.weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
  SUBCASE("s = (1, 0) at tau = 0.5 gives softmax(2, 0)") {
    auto dw = fusion_weights({1.0, 0.0}, 0.5);
    CHECK(dw.weights[0] == doctest::Approx(0.8807970779778824).epsilon(1e-10));
    CHECK(dw.weights[1] == doctest::Approx(0.1192029220221176).epsilon(1e-10));
  }
  SUBCASE("tau -> 0 approaches one-hot; argmax never moves with tau") {
    auto dw = fusion_weights({1.0, 0.0}, 0.01);
    CHECK(dw.weights[0] > 1.0 - 1e-10);
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> sims(4);
      for (auto& s : sims) s = rng.uniform(-1.0, 1.0);
      int ref = -1;
      for (double tau : {0.01, 0.1, 0.5, 1.0}) {
        const int am = fusion_weights(sims, tau).argmax();
        if (ref < 0) ref = am;
        CHECK(am == ref);
      }
    }
  }
  SUBCASE("weights sum to one and are strictly positive") {
    Rng rng(56);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> sims(5);
      for (auto& s : sims) s = rng.uniform(-1.0, 1.0);
      auto dw = fusion_weights(sims, 0.5);
      double z = 0.0;
      for (double w : dw.weights) {
        CHECK(w > 0.0);
        CHECK(w < 1.0);
        z += w;
      }
      CHECK(std::abs(z - 1.0) < 1e-6);
    }
  }
  SUBCASE("invalid inputs rejected") {
    CHECK_THROWS_AS(fusion_weights({0.5}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fusion_weights({0.5}, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(fusion_weights({std::numeric_limits<double>::quiet_NaN()}, 0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("fuse: selection, uniform duplicates, brute-force oracle, permutation invariance") {
  Rng rng(57);
  std::vector<Tensor> variants;
  for (int k = 0; k < 3; ++k) variants.push_back(random_tensor({2, 3, 3}, rng));

  SUBCASE("one-hot weights select that variant exactly") {
    DomainWeights dw;
    dw.weights = {0.0, 0.0, 1.0};
    CHECK(fuse(variants, dw).values == variants[2].values);
  }
  SUBCASE("uniform weights over identical variants reproduce the variant") {
    DomainWeights dw;
    dw.weights = {0.5, 0.5};
    std::vector<Tensor> same{variants[0], variants[0]};
    CHECK(max_abs_diff(fuse(same, dw), variants[0]) < 1e-15);
  }
  SUBCASE("weighted sum matches an independent triple loop within 1e-6") {
    DomainWeights dw;
    dw.weights = {0.2, 0.3, 0.5};
    const Tensor fused = fuse(variants, dw);
    for (int c = 0; c < 2; ++c)
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
          double acc = 0.0;
          for (int k = 0; k < 3; ++k) acc += dw.weights[k] * variants[k].at3(c, h, w);
          CHECK(std::abs(fused.at3(c, h, w) - acc) < 1e-6);
        }
  }
  SUBCASE("joint permutation of variants and weights leaves the fusion unchanged") {
    DomainWeights dw;
    dw.weights = {0.2, 0.3, 0.5};
    const Tensor fused = fuse(variants, dw);
    std::vector<Tensor> perm{variants[2], variants[0], variants[1]};
    DomainWeights dwp;
    dwp.weights = {0.5, 0.2, 0.3};
    CHECK(max_abs_diff(fuse(perm, dwp), fused) < 1e-12);
  }
  SUBCASE("mismatched variant shapes or weight length rejected") {
    DomainWeights dw;
    dw.weights = {0.5, 0.5};
    CHECK_THROWS_AS(fuse(variants, dw), std::invalid_argument);
    std::vector<Tensor> bad{variants[0], random_tensor({2, 2, 3}, rng)};
    CHECK_THROWS_AS(fuse(bad, dw), std::invalid_argument);
  }
}

TEST_CASE("infer_fused: K=1 reduces to the single modulated variant") {
  SdmConfig cfg;
  cfg.channels = 4;
  cfg.num_domains = 1;
  cfg.seed = 23;
  ParamStore store;
  SdmModule sdm(cfg, store);

  Rng rng(58);
  Tensor f = random_tensor({4, 4, 4}, rng);
  auto protos = std::vector<FrequencyPrototype>{
      compute_prototype({f}, 0, sdm_decomposer(sdm))};

  DomainWeights dw;
  const Tensor fused = infer_fused(f, protos, sdm, 0.5, &dw);
  CHECK(dw.weights.size() == 1);
  CHECK(dw.weights[0] == doctest::Approx(1.0).epsilon(1e-15));

  ag::NoGradGuard ng;
  auto expect = sdm.forward(ag::constant(f), 0)->value;
  CHECK(max_abs_diff(fused, expect) < 1e-12);

  SUBCASE("missing prototype rejected") {
    std::vector<FrequencyPrototype> none;
    CHECK_THROWS_WITH_AS(infer_fused(f, none, sdm, 0.5), doctest::Contains("missing prototype"),
                         std::invalid_argument);
  }
}

TEST_CASE("prototype store round trips with similarities intact to 1e-12") {
  Rng rng(59);
  std::vector<FrequencyPrototype> protos;
  for (int k = 0; k < 3; ++k) {
    FrequencyPrototype p;
    p.domain_id = k;
    p.sample_count = 7 + k;
    for (int c = 0; c < 8; ++c) {
      p.low.push_back(rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform_int(-6, 3)));
      p.high.push_back(rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform_int(-6, 3)));
    }
    protos.push_back(std::move(p));
  }

  const std::string path =
      (std::filesystem::temp_directory_path() / "wavedg_proto_test.json").string();
  save_prototypes(path, protos, 8);
  int c = 0;
  auto loaded = load_prototypes(path, &c);
  CHECK(c == 8);
  REQUIRE(loaded.size() == protos.size());
  for (std::size_t a = 0; a < protos.size(); ++a) {
    CHECK(loaded[a].sample_count == protos[a].sample_count);
    for (std::size_t b = 0; b < protos.size(); ++b)
      CHECK(std::abs(similarity(loaded[a], loaded[b]) - similarity(protos[a], protos[b])) <
            1e-12);
  }
  std::filesystem::remove(path);

  SUBCASE("rerun writes byte-identical files") {
    const std::string p1 = path + ".1", p2 = path + ".2";
    save_prototypes(p1, protos, 8);
    save_prototypes(p2, protos, 8);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK_FALSE(s1.empty());
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
  }
}

TEST_SUITE_END();
