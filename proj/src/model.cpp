#include "wavedg/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace wavedg {

void ModelConfig::validate() const {
  if (image_size < Encoder::kStride || image_size % Encoder::kStride != 0)
    throw std::invalid_argument("model: image_size must be a positive multiple of 16");
  if (channels <= 0 || channels % 8 != 0)
    throw std::invalid_argument("model: channels must be positive and divisible by 8");
  if (num_domains < 1) throw std::invalid_argument("model: need at least one domain");
  if (decoder_blocks < 1) throw std::invalid_argument("model: decoder_blocks must be at least 1");
  if (!(tau > 0.0)) throw std::invalid_argument("model: tau must be positive");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"channels", c.channels},
          {"num_domains", c.num_domains},
          {"flags",
           {{"sdm", c.flags.sdm},
            {"fadf", c.flags.fadf},
            {"hmpr", c.flags.hmpr},
            {"low_branch", c.flags.low_branch},
            {"high_branch", c.flags.high_branch}}},
          {"encoder_depth", c.encoder_depth},
          {"adapter_enabled", c.adapter_enabled},
          {"freeze_backbone", c.freeze_backbone},
          {"decoder_blocks", c.decoder_blocks},
          {"tau", c.tau},
          {"alpha_init", c.alpha_init},
          {"token_std", c.token_std},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_domains = j.at("num_domains").get<int>();
  const auto& f = j.at("flags");
  c.flags.sdm = f.at("sdm").get<bool>();
  c.flags.fadf = f.at("fadf").get<bool>();
  c.flags.hmpr = f.at("hmpr").get<bool>();
  c.flags.low_branch = f.at("low_branch").get<bool>();
  c.flags.high_branch = f.at("high_branch").get<bool>();
  c.encoder_depth = j.at("encoder_depth").get<int>();
  c.adapter_enabled = j.at("adapter_enabled").get<bool>();
  c.freeze_backbone = j.at("freeze_backbone").get<bool>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.tau = j.at("tau").get<double>();
  c.alpha_init = j.at("alpha_init").get<double>();
  c.token_std = j.at("token_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();

  EncoderConfig ec;
  ec.channels = config_.channels;
  ec.depth = config_.encoder_depth;
  ec.adapter_enabled = config_.adapter_enabled;
  ec.freeze_backbone = config_.freeze_backbone;
  ec.seed = config_.seed;
  encoder_ = std::make_unique<Encoder>(ec, store_);

  if (config_.flags.sdm) {
    SdmConfig sc;
    sc.channels = config_.channels;
    sc.num_domains = config_.num_domains;
    sc.low_branch = config_.flags.low_branch;
    sc.high_branch = config_.flags.high_branch;
    sc.alpha_init = config_.alpha_init;
    sc.token_std = config_.token_std;
    sc.seed = config_.seed;
    sdm_ = std::make_unique<SdmModule>(sc, store_);
  }

  HmprConfig hc;
  hc.channels = config_.channels;
  hc.grid_h = config_.grid();
  hc.grid_w = config_.grid();
  hc.blocks = config_.decoder_blocks;
  hc.stage2_enabled = config_.flags.hmpr;
  hc.seed = config_.seed;
  hmpr_ = std::make_unique<HmprModule>(hc, store_);
}

TrainForward Model::decode_feature(const ag::NodePtr& feature) const {
  const int hb = config_.image_size;
  auto refine = hmpr_->refine(feature, hmpr_->default_prompts(), hb, hb);
  TrainForward out;
  out.coarse_full = ag::bilinear_upsample(refine.coarse.logits, hb, hb);
  out.coarse_iou = refine.coarse.iou;
  if (refine.used_stage2) {
    out.fine_full = refine.final_logits;  // already bilinear-upsampled fine logits
    out.fine_iou = refine.fine.iou;
  }
  out.final_logits = refine.final_logits;
  return out;
}

TrainForward Model::forward_train(const Tensor& pixels, int domain_id) const {
  auto x = ag::constant(pixels);
  auto f = encoder_->forward(x);
  if (sdm_) f = sdm_->forward(f, domain_id);
  return decode_feature(f);
}

Tensor Model::encode(const Tensor& pixels) const {
  ag::NoGradGuard ng;
  return encoder_->forward(ag::constant(pixels))->value;
}

Tensor Model::infer(const Tensor& pixels, EvalMode mode, int domain_id,
                    const std::vector<FrequencyPrototype>* prototypes,
                    DomainWeights* weights_out) const {
  ag::NoGradGuard ng;
  auto f = encoder_->forward(ag::constant(pixels));

  ag::NodePtr feature;
  switch (mode) {
    case EvalMode::plain:
      feature = f;
      break;
    case EvalMode::known_token:
      if (!sdm_) throw std::logic_error("infer: known_token requires the SDM module");
      feature = sdm_->forward(f, domain_id);
      break;
    case EvalMode::uniform_tokens: {
      if (!sdm_) throw std::logic_error("infer: uniform_tokens requires the SDM module");
      auto f_wave = sdm_->frequency_features(f);
      const int k = sdm_->num_domains();
      std::vector<Tensor> variants;
      variants.reserve(k);
      for (int d = 0; d < k; ++d) variants.push_back(sdm_->modulate(f_wave, d)->value);
      DomainWeights uniform;
      uniform.weights.assign(k, 1.0 / k);
      uniform.similarities.assign(k, 0.0);
      feature = ag::constant(fuse(variants, uniform));
      break;
    }
    case EvalMode::fused: {
      if (!sdm_) throw std::logic_error("infer: fused mode requires the SDM module");
      if (!prototypes) throw std::invalid_argument("infer: fused mode requires prototypes");
      feature = ag::constant(infer_fused(f->value, *prototypes, *sdm_, config_.tau, weights_out));
      break;
    }
  }
  return decode_feature(feature).final_logits->value;
}

std::vector<ag::NodePtr> Model::trainable_parameters() const {
  std::vector<ag::NodePtr> out;
  for (const auto& name : trainable_parameter_names()) out.push_back(store_.get(name));
  return out;
}

std::vector<std::string> Model::trainable_parameter_names() const {
  const auto encoder_trainable = encoder_->trainable_parameter_names();
  std::vector<std::string> out;
  for (const auto& [name, node] : store_.items()) {
    if (name.rfind("encoder.", 0) == 0) {
      if (std::find(encoder_trainable.begin(), encoder_trainable.end(), name) !=
          encoder_trainable.end())
        out.push_back(name);
    } else {
      out.push_back(name);
    }
  }
  return out;
}

}  // namespace wavedg
