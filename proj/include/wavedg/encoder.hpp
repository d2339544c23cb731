#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wavedg/autograd.hpp"
#include "wavedg/params.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg {

// RGB image, pixels {3,H,W}. Raw pixel values live in [0,1]; the preprocess
// step replaces them with standardized values before encoding.
struct Image {
  Tensor pixels;
  int domain_id = -1;
};

struct FeatureMap {
  Tensor values;  // {C, H', W'}
  int stride = 16;
};

struct EncoderConfig {
  int channels = 32;  // output channel count C
  int depth = 1;      // extra stride-1 refinement convs after the downsampling stages
  bool adapter_enabled = false;
  bool freeze_backbone = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Strided convolutional image embedder with SAM-compatible output geometry:
// four stride-2 stages, so the feature grid is exactly (H/16, W/16). Each
// stage can carry a residual bottleneck adapter whose final projection is
// zero-initialized, making the adapted output equal the plain output at
// construction time.
class Encoder {
 public:
  static constexpr int kStride = 16;

  Encoder(const EncoderConfig& config, ParamStore& store);

  const EncoderConfig& config() const { return config_; }

  // Graph-building forward on a {3,H,W} node; dims must be divisible by 16.
  ag::NodePtr forward(const ag::NodePtr& image) const;

  // Validated inference entry point.
  FeatureMap encode(const Image& image) const;

  // Names of parameters the optimizer may update under the freeze contract.
  std::vector<std::string> trainable_parameter_names() const;

  const std::vector<std::string>& parameter_names() const { return all_names_; }
  const std::vector<std::string>& adapter_parameter_names() const { return adapter_names_; }

 private:
  EncoderConfig config_;
  ParamStore* store_;
  std::vector<int> stage_channels_;
  std::vector<std::string> all_names_;
  std::vector<std::string> adapter_names_;
};

}  // namespace wavedg
