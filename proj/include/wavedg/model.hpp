#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "wavedg/encoder.hpp"
#include "wavedg/fadf.hpp"
#include "wavedg/hmpr.hpp"
#include "wavedg/params.hpp"
#include "wavedg/sdm.hpp"

namespace wavedg {

struct ModuleFlags {
  bool sdm = true;
  bool fadf = true;
  bool hmpr = true;
  bool low_branch = true;
  bool high_branch = true;
};

struct ModelConfig {
  int image_size = 64;  // divisible by 16
  int channels = 32;    // divisible by 8
  int num_domains = 4;
  ModuleFlags flags;
  int encoder_depth = 1;
  bool adapter_enabled = false;
  bool freeze_backbone = false;
  int decoder_blocks = 2;
  double tau = 0.5;
  double alpha_init = 0.1;
  double token_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  int grid() const { return image_size / Encoder::kStride; }
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

enum class EvalMode {
  plain,           // no modulation (SDM disabled)
  known_token,     // ground-truth domain token (training / in-domain path)
  uniform_tokens,  // equal-weight average of all domain variants
  fused            // FADF similarity-weighted fusion
};

struct TrainForward {
  ag::NodePtr coarse_full;  // {1,H,W} coarse logits upsampled to input resolution
  ag::NodePtr coarse_iou;
  ag::NodePtr fine_full;    // set only when stage 2 ran
  ag::NodePtr fine_iou;
  ag::NodePtr final_logits;
};

// Full pipeline: encoder -> (SDM) -> decoder ladder. Module flags decide
// which parameters exist; disabled modules leave no trace in the store.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = delete;
  Model& operator=(Model&&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return *encoder_; }
  const SdmModule* sdm() const { return sdm_.get(); }
  const HmprModule& decoder() const { return *hmpr_; }

  // Builds the training graph with the ground-truth domain token.
  TrainForward forward_train(const Tensor& pixels, int domain_id) const;

  // Inference final logits {1,H,W}; graph-free.
  Tensor infer(const Tensor& pixels, EvalMode mode, int domain_id = -1,
               const std::vector<FrequencyPrototype>* prototypes = nullptr,
               DomainWeights* weights_out = nullptr) const;

  // Encoder output for prototype computation; graph-free.
  Tensor encode(const Tensor& pixels) const;

  // Optimizer view honoring the encoder freeze contract.
  std::vector<ag::NodePtr> trainable_parameters() const;
  std::vector<std::string> trainable_parameter_names() const;

 private:
  TrainForward decode_feature(const ag::NodePtr& feature) const;

  ModelConfig config_;
  ParamStore store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<SdmModule> sdm_;
  std::unique_ptr<HmprModule> hmpr_;
};

}  // namespace wavedg
