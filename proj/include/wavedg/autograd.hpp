#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "wavedg/tensor.hpp"

// Tape-based reverse-mode autodiff over Tensor. A forward pass builds a DAG
// of shared_ptr nodes; backward(root) runs the closures in reverse
// topological order. When grad mode is off (NoGradGuard) ops emit detached
// nodes and retain no graph, which is the inference path.

namespace wavedg::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backfn;

  double item() const {
    if (value.numel() != 1) throw std::logic_error("item: node is not a scalar");
    return value.values[0];
  }
  void ensure_grad() {
    if (!has_grad) {
      grad = Tensor::zeros(value.shape);
      has_grad = true;
    }
  }
  void clear_grad() {
    if (has_grad) std::fill(grad.values.begin(), grad.values.end(), 0.0);
  }
};

bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

NodePtr constant(Tensor v);
NodePtr param(Tensor v);

// Runs reverse-mode accumulation from a scalar root. Gradients accumulate
// into every reachable node with requires_grad; call clear_grad between
// steps.
void backward(const NodePtr& root);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr divide(const NodePtr& a, const NodePtr& b);
NodePtr affine(const NodePtr& a, double scale, double shift);
NodePtr scale_by(const NodePtr& x, const NodePtr& s);  // s is rank-0
NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr log(const NodePtr& a);
NodePtr pow_const(const NodePtr& a, double e);
NodePtr clamp(const NodePtr& a, double lo, double hi);
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);
NodePtr reshape(const NodePtr& a, std::vector<int> shape);
NodePtr concat_channels(const NodePtr& a, const NodePtr& b);
NodePtr concat_rows(const NodePtr& a, const NodePtr& b);
NodePtr slice_rows(const NodePtr& a, int r0, int r1);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
NodePtr softmax_rows(const NodePtr& a);
NodePtr layer_norm_rows(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                        double eps = 1e-5);
NodePtr add_row_vector(const NodePtr& m, const NodePtr& v);
NodePtr add_channel_bias(const NodePtr& x, const NodePtr& v);
NodePtr gap_spatial(const NodePtr& x);     // C×H×W -> {C}, spatial mean
NodePtr chw_to_rows(const NodePtr& x);     // C×H×W -> (H·W)×C
NodePtr rows_to_chw(const NodePtr& m, int c, int h, int w);
NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad);
NodePtr conv_transpose2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride,
                         int pad = 0);
NodePtr bilinear_upsample(const NodePtr& x, int out_h, int out_w);

}  // namespace wavedg::ag
