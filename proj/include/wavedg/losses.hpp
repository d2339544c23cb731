#pragma once

#include "wavedg/autograd.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg {

struct LossConfig {
  double lambda_dice = 0.8;
  double lambda_focal = 0.2;
  double gamma = 2.0;
  double smooth = 1e-6;

  void validate() const;
};

// All loss terms take prediction probabilities p in [0,1] (graph nodes) and
// a strictly binary ground-truth tensor of the same shape.

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
ag::NodePtr dice_loss(const ag::NodePtr& probs, const Tensor& target, double smooth);

// mean over pixels of -(1 - p_t)^gamma * log(p_t), p_t = p on positives and
// 1-p on negatives; p is clamped to [1e-7, 1-1e-7]. No class-balance factor.
ag::NodePtr focal_loss(const ag::NodePtr& probs, const Tensor& target, double gamma);

// (s_hat - s_iou)^2 with the IoU target treated as a constant.
ag::NodePtr iou_mse_loss(const ag::NodePtr& predicted_iou, double actual_iou);

// Smoothed IoU of the thresholded prediction (p > 0.5) against the target;
// this is the detached regression target for the IoU head.
double actual_iou(const Tensor& probs, const Tensor& target, double smooth);

// lambda_dice * dice + lambda_focal * focal + iou_mse.
ag::NodePtr total_loss(const ag::NodePtr& probs, const ag::NodePtr& predicted_iou,
                       const Tensor& target, const LossConfig& config);

struct Metrics {
  double dice = 0.0;  // percentages
  double iou = 0.0;
  double f1 = 0.0;
};

// Overlap metrics on hard binary masks, in percent. Empty-vs-empty is
// defined as a perfect 100 for all three.
Metrics compute_metrics(const Tensor& prediction, const Tensor& ground_truth);

void require_binary(const Tensor& mask, const char* what);

}  // namespace wavedg
