#include "wavedg/params.hpp"

#include <cmath>
#include <stdexcept>

namespace wavedg {

ag::NodePtr ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::logic_error("param already registered: " + name);
  auto node = ag::param(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, node);
  return node;
}

ag::NodePtr ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::vector<ag::NodePtr> ParamStore::nodes() const {
  std::vector<ag::NodePtr> out;
  out.reserve(items_.size());
  for (const auto& [_, node] : items_) out.push_back(node);
  return out;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& [name, _] : items_) out.push_back(name);
  return out;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& [_, node] : items_) n += node->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (const auto& [_, node] : items_) node->clear_grad();
}

namespace init {

Tensor zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape)); }

Tensor constant(std::vector<int> shape, double v) { return Tensor::full(std::move(shape), v); }

Tensor normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) v = rng.normal(0.0, stddev);
  return t;
}

Tensor he_conv(int out_c, int in_c, int kh, int kw, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_c) * kh * kw));
  return normal({out_c, in_c, kh, kw}, stddev, rng);
}

Tensor he_linear(int in_dim, int out_dim, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim));
  return normal({in_dim, out_dim}, stddev, rng);
}

Tensor identity_conv(int channels, int k, double noise_std, Rng& rng) {
  Tensor w = noise_std > 0.0 ? normal({channels, channels, k, k}, noise_std, rng)
                             : zeros({channels, channels, k, k});
  const int center = (k / 2) * k + k / 2;
  for (int c = 0; c < channels; ++c)
    w.values[(static_cast<std::size_t>(c) * channels + c) * k * k + center] += 1.0;
  return w;
}

}  // namespace init

AdamOptimizer::AdamOptimizer(std::vector<ag::NodePtr> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

void AdamOptimizer::zero_grad() {
  for (const auto& p : params_) p->clear_grad();
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p->has_grad) continue;
    for (std::size_t j = 0; j < p->value.values.size(); ++j) {
      const double g = p->grad.values[j];
      double& m = m_[i].values[j];
      double& v = v_[i].values[j];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value.values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace wavedg
