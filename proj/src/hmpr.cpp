#include "wavedg/hmpr.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wavedg {

void HmprConfig::validate() const {
  if (channels <= 0 || channels % 8 != 0)
    throw std::invalid_argument("hmpr: channels must be positive and divisible by 8");
  if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("hmpr: empty feature grid");
  if (blocks < 1) throw std::invalid_argument("hmpr: need at least one attention block");
}

HmprModule::HmprModule(const HmprConfig& config, ParamStore& store)
    : config_(config), store_(&store) {
  config_.validate();
  const int c = config_.channels;
  Rng rng(seed_split(config_.seed, "init.hmpr"));

  // Prompt side: learned defaults plus (stage-2 only) the mask embedder and
  // the dense-token self-attention.
  store_->add("hmpr.prompt.no_mask_embed", init::normal({c}, 0.02, rng));
  store_->add("hmpr.prompt.no_prompt_token", init::normal({c}, 0.02, rng));
  if (config_.stage2_enabled) {
    const int c4 = c / 4, c2 = c / 2;
    store_->add("hmpr.prompt.embed.conv1.w", init::he_conv(c4, 1, 3, 3, rng));
    store_->add("hmpr.prompt.embed.conv1.b", init::zeros({c4}));
    store_->add("hmpr.prompt.embed.conv2.w", init::he_conv(c2, c4, 3, 3, rng));
    store_->add("hmpr.prompt.embed.conv2.b", init::zeros({c2}));
    store_->add("hmpr.prompt.embed.proj.w", init::he_conv(c, c2, 1, 1, rng));
    store_->add("hmpr.prompt.embed.proj.b", init::zeros({c}));
    register_attention("hmpr.prompt.attn", rng);
  }

  register_stage(1, rng);
  if (config_.stage2_enabled) register_stage(2, rng);
}

void HmprModule::register_attention(const std::string& prefix, Rng& rng) {
  const int c = config_.channels;
  for (const char* part : {"q", "k", "v"}) {
    store_->add(prefix + ".w" + part, init::he_linear(c, c, rng));
    store_->add(prefix + ".b" + part, init::zeros({c}));
  }
  // Zero output projection: every attention block starts as a pass-through
  // around its residual.
  store_->add(prefix + ".wo", init::zeros({c, c}));
  store_->add(prefix + ".bo", init::zeros({c}));
}

void HmprModule::register_stage(int stage, Rng& rng) {
  const int c = config_.channels;
  const std::string s = "hmpr.stage" + std::to_string(stage);

  store_->add(s + ".iou_token", init::normal({c}, 0.02, rng));
  store_->add(s + ".mask_token", init::normal({c}, 0.02, rng));

  for (int b = 0; b < config_.blocks; ++b) {
    const std::string p = s + ".block" + std::to_string(b);
    register_attention(p + ".self", rng);
    register_attention(p + ".t2i", rng);
    register_attention(p + ".i2t", rng);
    store_->add(p + ".mlp.w1", init::he_linear(c, 2 * c, rng));
    store_->add(p + ".mlp.b1", init::zeros({2 * c}));
    store_->add(p + ".mlp.w2", init::he_linear(2 * c, c, rng));
    store_->add(p + ".mlp.b2", init::zeros({c}));
    for (int ln = 1; ln <= 4; ++ln) {
      store_->add(p + ".ln" + std::to_string(ln) + ".g", init::constant({c}, 1.0));
      store_->add(p + ".ln" + std::to_string(ln) + ".b", init::zeros({c}));
    }
  }

  // Upsampling ladder: 2 transposed convs for stage 1 (4x), 3 for stage 2
  // (8x). Kernel 4 / stride 2 / pad 1 so neighboring outputs overlap.
  const int c2 = c / 2, c4 = c / 4, c8 = c / 8;
  store_->add(s + ".up1.w", init::he_conv(c, c2, 4, 4, rng));  // stored IOHW
  store_->add(s + ".up1.b", init::zeros({c2}));
  store_->add(s + ".up2.w", init::he_conv(c2, c4, 4, 4, rng));
  store_->add(s + ".up2.b", init::zeros({c4}));
  if (stage == 2) {
    store_->add(s + ".up3.w", init::he_conv(c4, c8, 4, 4, rng));
    store_->add(s + ".up3.b", init::zeros({c8}));
  }

  store_->add(s + ".input_ln.g", init::constant({c}, 1.0));
  store_->add(s + ".input_ln.b", init::zeros({c}));

  const int emb = stage == 2 ? c8 : c4;
  store_->add(s + ".hyper.w1", init::he_linear(c, c, rng));
  store_->add(s + ".hyper.b1", init::zeros({c}));
  Tensor hyper_w2 = init::he_linear(c, emb, rng);
  if (stage == 2) {
    // Refinement fades in: the fine head starts small so early training is
    // carried by stage 1 under deep supervision.
    for (auto& v : hyper_w2.values) v *= 0.25;
  }
  store_->add(s + ".hyper.w2", std::move(hyper_w2));
  store_->add(s + ".hyper.b2", init::zeros({emb}));
  // Vessel masks are sparse; starting the output logits negative keeps the
  // background pre-saturated instead of driving every unit there early.
  store_->add(s + ".logit_bias", init::constant({1}, -2.0));

  const std::string ih = "hmpr.iou_head.s" + std::to_string(stage);
  store_->add(ih + ".w1", init::he_linear(c, c4, rng));
  store_->add(ih + ".b1", init::zeros({c4}));
  store_->add(ih + ".w2", init::he_linear(c4, 1, rng));
  store_->add(ih + ".b2", init::constant({1}, 0.5));
}

ag::NodePtr HmprModule::attention(const ag::NodePtr& q_in, const ag::NodePtr& kv_in,
                                  const std::string& prefix) const {
  auto proj = [&](const ag::NodePtr& x, const char* part) {
    return ag::add_row_vector(ag::matmul(x, store_->get(prefix + ".w" + part)),
                              store_->get(prefix + ".b" + part));
  };
  auto q = proj(q_in, "q");
  auto k = proj(kv_in, "k");
  auto v = proj(kv_in, "v");
  auto scores = ag::affine(ag::matmul(q, ag::transpose(k)),
                           1.0 / std::sqrt(static_cast<double>(config_.channels)), 0.0);
  auto mixed = ag::matmul(ag::softmax_rows(scores), v);
  return proj(mixed, "o");
}

ag::NodePtr HmprModule::mlp2(const ag::NodePtr& x, const std::string& prefix) const {
  auto h = ag::relu(ag::add_row_vector(ag::matmul(x, store_->get(prefix + ".w1")),
                                       store_->get(prefix + ".b1")));
  return ag::add_row_vector(ag::matmul(h, store_->get(prefix + ".w2")),
                            store_->get(prefix + ".b2"));
}

PromptEmbeddings HmprModule::default_prompts() const {
  const int c = config_.channels;
  auto zeros = ag::constant(Tensor::zeros({c, config_.grid_h, config_.grid_w}));
  PromptEmbeddings p;
  p.dense = ag::add_channel_bias(zeros, store_->get("hmpr.prompt.no_mask_embed"));
  p.sparse = ag::reshape(store_->get("hmpr.prompt.no_prompt_token"), {1, c});
  return p;
}

DecodeOut HmprModule::decode(const ag::NodePtr& fused, const PromptEmbeddings& prompts,
                             int stage) const {
  const int c = config_.channels, gh = config_.grid_h, gw = config_.grid_w;
  if (fused->value.shape != std::vector<int>{c, gh, gw})
    throw std::invalid_argument("hmpr.decode: fused feature must be {" + std::to_string(c) + "," +
                                std::to_string(gh) + "," + std::to_string(gw) + "}, got " +
                                fused->value.shape_str());
  if (!prompts.dense || prompts.dense->value.shape != std::vector<int>{c, gh, gw})
    throw std::invalid_argument("hmpr.decode: dense prompt shape mismatch");
  if (!prompts.sparse || prompts.sparse->value.rank() != 2 ||
      prompts.sparse->value.shape[1] != c)
    throw std::invalid_argument("hmpr.decode: sparse prompt shape mismatch");

  const std::string s = "hmpr.stage" + std::to_string(stage);
  auto src = ag::layer_norm_rows(ag::chw_to_rows(ag::add(fused, prompts.dense)),
                                 store_->get(s + ".input_ln.g"), store_->get(s + ".input_ln.b"));
  auto tokens = ag::concat_rows(
      ag::concat_rows(ag::reshape(store_->get(s + ".iou_token"), {1, c}),
                      ag::reshape(store_->get(s + ".mask_token"), {1, c})),
      prompts.sparse);

  for (int b = 0; b < config_.blocks; ++b) {
    const std::string p = s + ".block" + std::to_string(b);
    auto ln = [&](const ag::NodePtr& x, int i) {
      const std::string l = p + ".ln" + std::to_string(i);
      return ag::layer_norm_rows(x, store_->get(l + ".g"), store_->get(l + ".b"));
    };
    tokens = ln(ag::add(tokens, attention(tokens, tokens, p + ".self")), 1);
    tokens = ln(ag::add(tokens, attention(tokens, src, p + ".t2i")), 2);
    tokens = ln(ag::add(tokens, mlp2(tokens, p + ".mlp")), 3);
    src = ln(ag::add(src, attention(src, tokens, p + ".i2t")), 4);
  }

  auto grid = ag::rows_to_chw(src, c, gh, gw);
  auto up = ag::relu(ag::conv_transpose2d(grid, store_->get(s + ".up1.w"),
                                          store_->get(s + ".up1.b"), 2, 1));
  up = ag::relu(
      ag::conv_transpose2d(up, store_->get(s + ".up2.w"), store_->get(s + ".up2.b"), 2, 1));
  if (stage == 2)
    up = ag::relu(
        ag::conv_transpose2d(up, store_->get(s + ".up3.w"), store_->get(s + ".up3.b"), 2, 1));

  const int emb_c = up->value.shape[0], rh = up->value.shape[1], rw = up->value.shape[2];
  auto mask_tok = ag::slice_rows(tokens, 1, 2);
  auto hyper = mlp2(mask_tok, s + ".hyper");                       // {1, emb_c}
  auto logits = ag::matmul(hyper, ag::reshape(up, {emb_c, rh * rw}));
  DecodeOut out;
  out.logits = ag::add_channel_bias(ag::reshape(logits, {1, rh, rw}),
                                    store_->get(s + ".logit_bias"));
  auto iou_tok = ag::slice_rows(tokens, 0, 1);
  out.iou = ag::clamp(mlp2(iou_tok, "hmpr.iou_head.s" + std::to_string(stage)), 0.0, 1.0);
  out.stage = stage == 2 ? MaskStage::fine : MaskStage::coarse;
  return out;
}

DecodeOut HmprModule::decode_stage1(const ag::NodePtr& fused, const PromptEmbeddings& prompts) const {
  return decode(fused, prompts, 1);
}

DecodeOut HmprModule::decode_stage2(const ag::NodePtr& fused, const PromptEmbeddings& prompts) const {
  if (!config_.stage2_enabled)
    throw std::logic_error("hmpr.decode_stage2: stage 2 is disabled in this configuration");
  return decode(fused, prompts, 2);
}

PromptEmbeddings HmprModule::mask_to_prompt(const ag::NodePtr& coarse_logits) const {
  if (!config_.stage2_enabled)
    throw std::logic_error("hmpr.mask_to_prompt: stage 2 is disabled in this configuration");
  const int r = coarse_resolution();
  if (coarse_logits->value.shape != std::vector<int>{1, r, r})
    throw std::invalid_argument("hmpr.mask_to_prompt: expected {1," + std::to_string(r) + "," +
                                std::to_string(r) + "} coarse logits, got " +
                                coarse_logits->value.shape_str());

  bool all_zero = true;
  for (double v : coarse_logits->value.values)
    if (v != 0.0) {
      all_zero = false;
      break;
    }

  const int c = config_.channels;
  ag::NodePtr dense0;
  if (all_zero) {
    // Absent-mask convention: broadcast the learned no-mask embedding.
    auto zeros = ag::constant(Tensor::zeros({c, config_.grid_h, config_.grid_w}));
    dense0 = ag::add_channel_bias(zeros, store_->get("hmpr.prompt.no_mask_embed"));
  } else {
    auto h = ag::relu(ag::conv2d(coarse_logits, store_->get("hmpr.prompt.embed.conv1.w"),
                                 store_->get("hmpr.prompt.embed.conv1.b"), 2, 1));
    h = ag::relu(ag::conv2d(h, store_->get("hmpr.prompt.embed.conv2.w"),
                            store_->get("hmpr.prompt.embed.conv2.b"), 2, 1));
    dense0 = ag::conv2d(h, store_->get("hmpr.prompt.embed.proj.w"),
                        store_->get("hmpr.prompt.embed.proj.b"), 1, 0);
  }

  auto toks = dense_token_attention(ag::chw_to_rows(dense0));
  PromptEmbeddings p;
  p.dense = ag::rows_to_chw(toks, c, config_.grid_h, config_.grid_w);
  p.sparse = ag::reshape(store_->get("hmpr.prompt.no_prompt_token"), {1, c});
  return p;
}

ag::NodePtr HmprModule::dense_token_attention(const ag::NodePtr& tokens) const {
  if (!config_.stage2_enabled)
    throw std::logic_error("hmpr.dense_token_attention: stage 2 is disabled");
  if (tokens->value.rank() != 2 || tokens->value.shape[1] != config_.channels)
    throw std::invalid_argument("hmpr.dense_token_attention: expected {N," +
                                std::to_string(config_.channels) + "} tokens");
  return ag::add(tokens, attention(tokens, tokens, "hmpr.prompt.attn"));
}

RefineOut HmprModule::refine(const ag::NodePtr& fused, const PromptEmbeddings& initial, int out_h,
                             int out_w) const {
  RefineOut out;
  out.coarse = decode_stage1(fused, initial);
  if (config_.stage2_enabled) {
    auto prompts2 = mask_to_prompt(out.coarse.logits);
    out.fine = decode_stage2(fused, prompts2);
    out.fine.stage = MaskStage::fine;
    out.used_stage2 = true;
    out.final_logits = ag::bilinear_upsample(out.fine.logits, out_h, out_w);
  } else {
    out.final_logits = ag::bilinear_upsample(out.coarse.logits, out_h, out_w);
  }
  return out;
}

}  // namespace wavedg
