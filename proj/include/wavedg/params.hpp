#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavedg/autograd.hpp"
#include "wavedg/rng.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg {

// Named parameter registry shared by all modules of a model. Registration
// order is stable and defines checkpoint order.
class ParamStore {
 public:
  ag::NodePtr add(const std::string& name, Tensor init);
  ag::NodePtr get(const std::string& name) const;
  bool has(const std::string& name) const;

  const std::vector<std::pair<std::string, ag::NodePtr>>& items() const { return items_; }
  std::vector<ag::NodePtr> nodes() const;
  std::vector<std::string> names() const;
  std::int64_t total_size() const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::NodePtr>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {
Tensor zeros(std::vector<int> shape);
Tensor constant(std::vector<int> shape, double v);
Tensor normal(std::vector<int> shape, double stddev, Rng& rng);
// He-style fan-in scaling for conv / linear weights feeding a ramp.
Tensor he_conv(int out_c, int in_c, int kh, int kw, Rng& rng);
Tensor he_linear(int in_dim, int out_dim, Rng& rng);  // stored (in, out)
// Square conv initialized to the identity map plus symmetry-breaking noise.
Tensor identity_conv(int channels, int k, double noise_std, Rng& rng);
}  // namespace init

// Adam with bias correction; the learning rate is adjusted externally
// between epochs by the scheduler.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<ag::NodePtr> params, double lr,
                         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  std::vector<ag::NodePtr> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace wavedg
