#pragma once

#include <cstdint>

#include "wavedg/autograd.hpp"
#include "wavedg/params.hpp"

namespace wavedg {

struct HmprConfig {
  int channels = 32;       // feature width C (divisible by 8)
  int grid_h = 4;          // feature grid H'
  int grid_w = 4;          // feature grid W'
  int blocks = 2;          // two-way attention blocks per stage
  bool stage2_enabled = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PromptEmbeddings {
  ag::NodePtr dense;   // {C, H', W'}
  ag::NodePtr sparse;  // {n_s, C} token rows
};

enum class MaskStage { coarse, fine, final };

struct DecodeOut {
  ag::NodePtr logits;  // {1, R, R}
  ag::NodePtr iou;     // {1, 1}, clamped to [0, 1]
  MaskStage stage = MaskStage::coarse;
};

struct RefineOut {
  DecodeOut coarse;
  DecodeOut fine;              // only set when stage 2 ran
  ag::NodePtr final_logits;    // {1, H, W} at input resolution
  bool used_stage2 = false;
};

// Two-stage coarse-to-fine mask decoder. Each stage runs two-way attention
// between a small token list (iou token, mask token, sparse prompts) and
// the image tokens, upscales with transposed convs, and emits logits via a
// hypernetwork dot product plus a clamped IoU estimate. The stage-1 mask is
// embedded back into dense prompts (with a self-attention pass over the
// dense tokens, no positional encodings) and drives stage 2, whose
// upsampling path has one extra 2x stage. Stage-1 alone plus bilinear
// interpolation is the baseline decoder used when refinement is disabled.
class HmprModule {
 public:
  HmprModule(const HmprConfig& config, ParamStore& store);

  const HmprConfig& config() const { return config_; }

  // Dense no-mask embedding broadcast plus the learned no-prompt token.
  PromptEmbeddings default_prompts() const;

  DecodeOut decode_stage1(const ag::NodePtr& fused, const PromptEmbeddings& prompts) const;
  DecodeOut decode_stage2(const ag::NodePtr& fused, const PromptEmbeddings& prompts) const;

  // Embeds coarse logits into dense prompts on the feature grid and applies
  // self-attention over the dense tokens. All-zero logits map to the
  // learned no-mask embedding.
  PromptEmbeddings mask_to_prompt(const ag::NodePtr& coarse_logits) const;

  // Residual self-attention over dense prompt tokens ({N,C} rows, one per
  // spatial position). No positional encodings: permutation equivariant.
  ag::NodePtr dense_token_attention(const ag::NodePtr& tokens) const;

  // Full ladder: stage 1 -> mask prompt -> stage 2 (if enabled) -> bilinear
  // to (out_h, out_w).
  RefineOut refine(const ag::NodePtr& fused, const PromptEmbeddings& initial, int out_h,
                   int out_w) const;

  int coarse_resolution() const { return 4 * config_.grid_h; }
  int fine_resolution() const { return 8 * config_.grid_h; }

 private:
  ag::NodePtr attention(const ag::NodePtr& q_in, const ag::NodePtr& kv_in,
                        const std::string& prefix) const;
  ag::NodePtr mlp2(const ag::NodePtr& x, const std::string& prefix) const;
  DecodeOut decode(const ag::NodePtr& fused, const PromptEmbeddings& prompts, int stage) const;
  void register_stage(int stage, Rng& rng);
  void register_attention(const std::string& prefix, Rng& rng);

  HmprConfig config_;
  ParamStore* store_;
};

}  // namespace wavedg
