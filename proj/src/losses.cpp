#include "wavedg/losses.hpp"

#include <stdexcept>

namespace wavedg {

void LossConfig::validate() const {
  if (lambda_dice < 0.0 || lambda_focal < 0.0)
    throw std::invalid_argument("loss: lambda weights must be non-negative");
  if (lambda_dice == 0.0 && lambda_focal == 0.0)
    throw std::invalid_argument("loss: at least one of lambda_dice/lambda_focal must be positive");
  if (gamma < 0.0) throw std::invalid_argument("loss: gamma must be non-negative");
  if (!(smooth > 0.0)) throw std::invalid_argument("loss: smooth must be positive");
}

void require_binary(const Tensor& mask, const char* what) {
  for (double v : mask.values)
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(std::string(what) + ": mask is not strictly binary");
}

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape != target.shape)
    throw std::invalid_argument(std::string(what) + ": prediction " + pred.shape_str() +
                                " vs target " + target.shape_str());
  require_binary(target, what);
}

}  // namespace

ag::NodePtr dice_loss(const ag::NodePtr& probs, const Tensor& target, double smooth) {
  check_pair(probs->value, target, "dice_loss");
  auto y = ag::constant(target);
  auto inter = ag::sum_all(ag::mul(probs, y));
  auto denom = ag::add(ag::sum_all(probs), ag::sum_all(y));
  auto num = ag::affine(inter, 2.0, smooth);
  auto ratio = ag::divide(num, ag::affine(denom, 1.0, smooth));
  return ag::affine(ratio, -1.0, 1.0);
}

ag::NodePtr focal_loss(const ag::NodePtr& probs, const Tensor& target, double gamma) {
  check_pair(probs->value, target, "focal_loss");
  auto p = ag::clamp(probs, 1e-7, 1.0 - 1e-7);
  auto y = ag::constant(target);
  // p_t = p*y + (1-p)*(1-y)
  auto pt = ag::add(ag::mul(p, y), ag::mul(ag::affine(p, -1.0, 1.0), ag::affine(y, -1.0, 1.0)));
  auto weight = ag::pow_const(ag::affine(pt, -1.0, 1.0), gamma);
  auto nll = ag::affine(ag::log(pt), -1.0, 0.0);
  return ag::mean_all(ag::mul(weight, nll));
}

double actual_iou(const Tensor& probs, const Tensor& target, double smooth) {
  check_pair(probs, target, "actual_iou");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < probs.values.size(); ++i) {
    const bool p = probs.values[i] > 0.5;
    const bool g = target.values[i] != 0.0;
    inter += (p && g) ? 1.0 : 0.0;
    uni += (p || g) ? 1.0 : 0.0;
  }
  return (inter + smooth) / (uni + smooth);
}

ag::NodePtr iou_mse_loss(const ag::NodePtr& predicted_iou, double actual) {
  auto diff = ag::affine(predicted_iou, 1.0, -actual);
  auto sq = ag::mul(diff, diff);
  return ag::mean_all(sq);
}

ag::NodePtr total_loss(const ag::NodePtr& probs, const ag::NodePtr& predicted_iou,
                       const Tensor& target, const LossConfig& config) {
  config.validate();
  auto loss = ag::affine(dice_loss(probs, target, config.smooth), config.lambda_dice, 0.0);
  loss = ag::add(loss, ag::affine(focal_loss(probs, target, config.gamma), config.lambda_focal, 0.0));
  const double s_iou = actual_iou(probs->value, target, config.smooth);
  return ag::add(loss, iou_mse_loss(predicted_iou, s_iou));
}

Metrics compute_metrics(const Tensor& prediction, const Tensor& ground_truth) {
  if (prediction.shape != ground_truth.shape)
    throw std::invalid_argument("metrics: shape mismatch " + prediction.shape_str() + " vs " +
                                ground_truth.shape_str());
  require_binary(prediction, "metrics");
  require_binary(ground_truth, "metrics");

  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < prediction.values.size(); ++i) {
    const bool p = prediction.values[i] != 0.0;
    const bool g = ground_truth.values[i] != 0.0;
    np += p;
    ng += g;
    inter += p && g;
  }
  Metrics m;
  if (np == 0 && ng == 0) {
    m.dice = m.iou = m.f1 = 100.0;
    return m;
  }
  const std::int64_t uni = np + ng - inter;
  m.dice = 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
  m.iou = 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
  const double precision = np > 0 ? static_cast<double>(inter) / static_cast<double>(np) : 0.0;
  const double recall = ng > 0 ? static_cast<double>(inter) / static_cast<double>(ng) : 0.0;
  m.f1 = (precision + recall) > 0.0 ? 100.0 * 2.0 * precision * recall / (precision + recall) : 0.0;
  return m;
}

}  // namespace wavedg
