#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wavedg/sdm.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg {

// Per-domain pooled low/high-frequency statistics, persisted after training.
struct FrequencyPrototype {
  int domain_id = -1;
  int sample_count = 0;
  std::vector<double> low;   // length C
  std::vector<double> high;  // length C
};

struct DomainWeights {
  std::vector<double> similarities;
  std::vector<double> weights;
  double temperature = 0.5;

  int argmax() const;
};

// Maps a {C,H,W} feature to its (low, high) frequency components. The
// production decomposer is the trained SDM branch pair; tests also plug in
// the parameter-free reference DWT here for cross-checks.
using Decomposer = std::function<std::pair<Tensor, Tensor>(const Tensor&)>;

Decomposer sdm_decomposer(const SdmModule& sdm);

// Mean over samples of the spatially pooled branch outputs. Uses
// compensated summation so the result is reproducible regardless of
// accumulation schedule.
FrequencyPrototype compute_prototype(const std::vector<Tensor>& features, int domain_id,
                                     const Decomposer& decomposer);

// Pooled frequency vectors of a single feature map (sample_count 1).
FrequencyPrototype frequency_signature(const Tensor& feature, const Decomposer& decomposer);

// Mean of the low/high cosine similarities, in [-1, 1]. Zero-norm vectors
// are rejected with the offending vector named.
double similarity(const FrequencyPrototype& test, const FrequencyPrototype& domain);

// Temperature softmax over similarities, max-subtracted.
DomainWeights fusion_weights(const std::vector<double>& similarities, double tau);

// Element-wise weighted sum of same-shaped domain variants.
Tensor fuse(const std::vector<Tensor>& domain_variants, const DomainWeights& weights);

// Test-time composition: frequency signature of the test feature,
// similarities against all K prototypes, temperature softmax, K modulated
// variants, soft-weighted fusion. Prototypes must cover domains 0..K-1.
Tensor infer_fused(const Tensor& test_feature, const std::vector<FrequencyPrototype>& prototypes,
                   const SdmModule& sdm, double tau, DomainWeights* weights_out = nullptr);

inline constexpr int kPrototypeStoreVersion = 1;

void save_prototypes(const std::string& path, const std::vector<FrequencyPrototype>& prototypes,
                     int channels);
std::vector<FrequencyPrototype> load_prototypes(const std::string& path, int* channels_out = nullptr);

}  // namespace wavedg
