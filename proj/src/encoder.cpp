#include "wavedg/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace wavedg {

void EncoderConfig::validate() const {
  if (channels <= 0) throw std::invalid_argument("encoder: channels must be positive");
  if (channels % 4 != 0) throw std::invalid_argument("encoder: channels must be divisible by 4");
  if (depth < 0) throw std::invalid_argument("encoder: depth must be non-negative");
}

Encoder::Encoder(const EncoderConfig& config, ParamStore& store)
    : config_(config), store_(&store) {
  config_.validate();
  const int c = config_.channels;
  stage_channels_ = {std::max(4, c / 4), std::max(8, c / 2), c, c};

  Rng rng(seed_split(config_.seed, "init.encoder"));
  auto add = [&](const std::string& name, Tensor t, bool adapter) {
    store_->add(name, std::move(t));
    all_names_.push_back(name);
    if (adapter) adapter_names_.push_back(name);
  };

  int in_c = 3;
  for (int s = 0; s < 4; ++s) {
    const int out_c = stage_channels_[s];
    const std::string p = "encoder.stage" + std::to_string(s);
    add(p + ".conv.w", init::he_conv(out_c, in_c, 3, 3, rng), false);
    add(p + ".conv.b", init::zeros({out_c}), false);
    if (config_.adapter_enabled) {
      const int mid = std::max(1, out_c / 4);
      const std::string a = "encoder.adapter" + std::to_string(s);
      add(a + ".down.w", init::he_conv(mid, out_c, 1, 1, rng), true);
      add(a + ".down.b", init::zeros({mid}), true);
      add(a + ".up.w", init::zeros({out_c, mid, 1, 1}), true);
      add(a + ".up.b", init::zeros({out_c}), true);
    }
    in_c = out_c;
  }
  for (int d = 0; d < config_.depth; ++d) {
    const std::string p = "encoder.head" + std::to_string(d);
    add(p + ".conv.w", init::he_conv(c, c, 3, 3, rng), false);
    add(p + ".conv.b", init::zeros({c}), false);
  }
}

ag::NodePtr Encoder::forward(const ag::NodePtr& image) const {
  ag::NodePtr x = image;
  for (int s = 0; s < 4; ++s) {
    const std::string p = "encoder.stage" + std::to_string(s);
    x = ag::relu(ag::conv2d(x, store_->get(p + ".conv.w"), store_->get(p + ".conv.b"), 2, 1));
    if (config_.adapter_enabled) {
      const std::string a = "encoder.adapter" + std::to_string(s);
      auto mid = ag::relu(ag::conv2d(x, store_->get(a + ".down.w"), store_->get(a + ".down.b"), 1, 0));
      auto delta = ag::conv2d(mid, store_->get(a + ".up.w"), store_->get(a + ".up.b"), 1, 0);
      x = ag::add(x, delta);
    }
  }
  for (int d = 0; d < config_.depth; ++d) {
    const std::string p = "encoder.head" + std::to_string(d);
    x = ag::relu(ag::conv2d(x, store_->get(p + ".conv.w"), store_->get(p + ".conv.b"), 1, 1));
  }
  return x;
}

FeatureMap Encoder::encode(const Image& image) const {
  const Tensor& px = image.pixels;
  if (px.rank() != 3 || px.shape[0] != 3)
    throw std::invalid_argument("encode: expected {3,H,W} pixels, got " + px.shape_str());
  if (px.shape[1] % kStride != 0 || px.shape[2] % kStride != 0)
    throw std::invalid_argument("encode: image " + std::to_string(px.shape[1]) + "x" +
                                std::to_string(px.shape[2]) + " not divisible by " +
                                std::to_string(kStride));
  if (!px.all_finite()) throw std::invalid_argument("encode: image contains non-finite pixels");
  ag::NoGradGuard ng;
  auto out = forward(ag::constant(px));
  return FeatureMap{std::move(out->value), kStride};
}

std::vector<std::string> Encoder::trainable_parameter_names() const {
  if (!config_.freeze_backbone) return all_names_;
  return adapter_names_;
}

}  // namespace wavedg
