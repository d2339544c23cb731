#pragma once

#include <cstdint>
#include <utility>

#include "wavedg/autograd.hpp"
#include "wavedg/params.hpp"

namespace wavedg {

struct SdmConfig {
  int channels = 32;
  int num_domains = 1;
  bool low_branch = true;
  bool high_branch = true;
  double alpha_init = 0.1;
  double token_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

// Frequency-aware domain modulator. Two convolutional branches split the
// feature map into low/high-frequency parts (each Conv3x3 -> ramp ->
// Conv3x3 -> ramp, shape preserving), a 1x1 conv fuses them back with a
// learnable residual weight alpha on the input, and a per-domain token
// (passed through its own bottleneck MLP) is broadcast-added per channel.
// With both branches disabled the fusion stage degenerates to the identity
// and only the token modulation remains.
class SdmModule {
 public:
  SdmModule(const SdmConfig& config, ParamStore& store);

  const SdmConfig& config() const { return config_; }
  int num_domains() const { return config_.num_domains; }

  // (low, high) branch outputs; a disabled branch yields nullptr.
  std::pair<ag::NodePtr, ag::NodePtr> decompose(const ag::NodePtr& feature) const;

  // conv1x1(concat(enabled branches)) + alpha * original.
  ag::NodePtr fuse_wave(const ag::NodePtr& low, const ag::NodePtr& high,
                        const ag::NodePtr& original) const;

  // Projected token t_hat for one source domain, a {C} node.
  ag::NodePtr token_offset(int domain_id) const;

  // f_wave + broadcast(t_hat_k).
  ag::NodePtr modulate(const ag::NodePtr& f_wave, int domain_id) const;

  // decompose -> fuse_wave -> modulate.
  ag::NodePtr forward(const ag::NodePtr& feature, int domain_id) const;

  // Frequency path only (no modulation): decompose -> fuse_wave.
  ag::NodePtr frequency_features(const ag::NodePtr& feature) const;

 private:
  SdmConfig config_;
  ParamStore* store_;
};

}  // namespace wavedg
