#include "wavedg/sdm.hpp"

#include <stdexcept>
#include <string>

namespace wavedg {

void SdmConfig::validate() const {
  if (channels <= 0 || channels % 4 != 0)
    throw std::invalid_argument("sdm: channels must be positive and divisible by 4");
  if (num_domains < 1) throw std::invalid_argument("sdm: need at least one domain");
}

SdmModule::SdmModule(const SdmConfig& config, ParamStore& store)
    : config_(config), store_(&store) {
  config_.validate();
  const int c = config_.channels;
  Rng rng(seed_split(config_.seed, "init.sdm"));

  // The encoder emits nonnegative features (post-ramp), so a near-identity
  // low branch starts as a pass-through; the high branch starts as free
  // detectors. With the fusion conv selecting the low half, F_wave begins
  // at (1 + alpha) * F instead of routing features through random weights.
  auto add_branch = [&](const std::string& name, bool near_identity) {
    store_->add("sdm." + name + ".conv1.w", near_identity
                                                ? init::identity_conv(c, 3, 0.01, rng)
                                                : init::he_conv(c, c, 3, 3, rng));
    store_->add("sdm." + name + ".conv1.b", init::zeros({c}));
    store_->add("sdm." + name + ".conv2.w", near_identity
                                                ? init::identity_conv(c, 3, 0.01, rng)
                                                : init::he_conv(c, c, 3, 3, rng));
    store_->add("sdm." + name + ".conv2.b", init::zeros({c}));
  };
  if (config_.low_branch) add_branch("low", true);
  if (config_.high_branch) add_branch("high", false);

  const int fuse_in = (config_.low_branch ? c : 0) + (config_.high_branch ? c : 0);
  if (fuse_in > 0) {
    Tensor fuse_w = init::zeros({c, fuse_in, 1, 1});
    if (config_.low_branch)
      for (int o = 0; o < c; ++o) fuse_w.values[static_cast<std::size_t>(o) * fuse_in + o] = 1.0;
    store_->add("sdm.fuse.w", std::move(fuse_w));
    store_->add("sdm.fuse.b", init::zeros({c}));
    store_->add("sdm.alpha", Tensor::scalar(config_.alpha_init));
  }

  const int mid = c / 4;
  for (int k = 0; k < config_.num_domains; ++k) {
    const std::string p = "sdm.token." + std::to_string(k);
    store_->add(p + ".t", init::normal({c}, config_.token_std, rng));
    store_->add(p + ".w1", init::he_linear(c, mid, rng));
    store_->add(p + ".b1", init::zeros({mid}));
    store_->add(p + ".w2", init::he_linear(mid, c, rng));
    store_->add(p + ".b2", init::zeros({c}));
  }
}

std::pair<ag::NodePtr, ag::NodePtr> SdmModule::decompose(const ag::NodePtr& feature) const {
  if (feature->value.rank() != 3 || feature->value.shape[0] != config_.channels)
    throw std::invalid_argument("sdm.decompose: expected {" + std::to_string(config_.channels) +
                                ",H,W} feature, got " + feature->value.shape_str());
  auto branch = [&](const std::string& name) {
    auto h1 = ag::relu(ag::conv2d(feature, store_->get("sdm." + name + ".conv1.w"),
                                  store_->get("sdm." + name + ".conv1.b"), 1, 1));
    return ag::relu(ag::conv2d(h1, store_->get("sdm." + name + ".conv2.w"),
                               store_->get("sdm." + name + ".conv2.b"), 1, 1));
  };
  ag::NodePtr low = config_.low_branch ? branch("low") : nullptr;
  ag::NodePtr high = config_.high_branch ? branch("high") : nullptr;
  return {low, high};
}

ag::NodePtr SdmModule::fuse_wave(const ag::NodePtr& low, const ag::NodePtr& high,
                                 const ag::NodePtr& original) const {
  if (!low && !high) return original;
  ag::NodePtr cat;
  if (low && high) {
    if (!low->value.same_shape(high->value) || !low->value.same_shape(original->value))
      throw std::invalid_argument("sdm.fuse_wave: low/high/original shapes must match");
    cat = ag::concat_channels(low, high);
  } else {
    cat = low ? low : high;
    if (!cat->value.same_shape(original->value))
      throw std::invalid_argument("sdm.fuse_wave: branch/original shapes must match");
  }
  auto mixed = ag::conv2d(cat, store_->get("sdm.fuse.w"), store_->get("sdm.fuse.b"), 1, 0);
  return ag::add(mixed, ag::scale_by(original, store_->get("sdm.alpha")));
}

ag::NodePtr SdmModule::token_offset(int domain_id) const {
  if (domain_id < 0 || domain_id >= config_.num_domains)
    throw std::invalid_argument("sdm.token_offset: domain_id " + std::to_string(domain_id) +
                                " out of range [0," + std::to_string(config_.num_domains) + ")");
  const std::string p = "sdm.token." + std::to_string(domain_id);
  const int c = config_.channels;
  auto t = ag::reshape(store_->get(p + ".t"), {1, c});
  auto h = ag::relu(ag::add_row_vector(ag::matmul(t, store_->get(p + ".w1")), store_->get(p + ".b1")));
  auto out = ag::add_row_vector(ag::matmul(h, store_->get(p + ".w2")), store_->get(p + ".b2"));
  return ag::reshape(out, {c});
}

ag::NodePtr SdmModule::modulate(const ag::NodePtr& f_wave, int domain_id) const {
  return ag::add_channel_bias(f_wave, token_offset(domain_id));
}

ag::NodePtr SdmModule::frequency_features(const ag::NodePtr& feature) const {
  auto [low, high] = decompose(feature);
  return fuse_wave(low, high, feature);
}

ag::NodePtr SdmModule::forward(const ag::NodePtr& feature, int domain_id) const {
  return modulate(frequency_features(feature), domain_id);
}

}  // namespace wavedg
