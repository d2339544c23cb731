#include "wavedg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "wavedg/kernels.hpp"

namespace wavedg::ag {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled && any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return n;
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = kernels::dot(a + i * k, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + d : d;
    }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] == 0.0) continue;
      kernels::axpy(arow[i], brow, c + i * n, n);
    }
  }
}

// Gathers conv patches: cols[(ic*kh*kw + r*kw + s), (oh*ow + ...)] with zero
// padding outside the input.
void im2col(const Tensor& x, int kh, int kw, int stride, int pad,
            int out_h, int out_w, std::vector<double>& cols) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  cols.assign(static_cast<std::size_t>(c) * kh * kw * out_h * out_w, 0.0);
  std::size_t row = 0;
  for (int ic = 0; ic < c; ++ic)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s, ++row) {
        double* dst = cols.data() + row * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + r - pad;
          if (iy < 0 || iy >= h) continue;
          const double* src = x.data() + (static_cast<std::size_t>(ic) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + s - pad;
            if (ix >= 0 && ix < w) dst[oy * out_w + ox] = src[ix];
          }
        }
      }
}

// Adjoint of im2col: scatters column gradients back onto the input grid.
void col2im_accum(const std::vector<double>& cols, int c, int h, int w, int kh, int kw,
                  int stride, int pad, int out_h, int out_w, double* dx) {
  std::size_t row = 0;
  for (int ic = 0; ic < c; ++ic)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s, ++row) {
        const double* src = cols.data() + row * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + r - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (static_cast<std::size_t>(ic) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + s - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * out_w + ox];
          }
        }
      }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

NodePtr constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

NodePtr param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

void backward(const NodePtr& root) {
  if (root->value.numel() != 1)
    throw std::logic_error("backward: root must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* next = node->parents[idx++].get();
      if (next->requires_grad && seen.insert(next).second) stack.push_back({next, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.values[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backfn) (*it)->backfn(**it);
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor out(a->value.shape);
  kernels::add(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), a->grad.data(), n.grad.numel());
    }
    if (b->requires_grad) {
      b->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), b->grad.data(), n.grad.numel());
    }
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out(a->value.shape);
  kernels::sub(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), a->grad.data(), n.grad.numel());
    }
    if (b->requires_grad) {
      b->ensure_grad();
      kernels::axpy(-1.0, n.grad.data(), b->grad.data(), n.grad.numel());
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(a->value.shape);
  kernels::mul(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    const std::size_t m = n.grad.values.size();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) a->grad.values[i] += n.grad.values[i] * b->value.values[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) b->grad.values[i] += n.grad.values[i] * a->value.values[i];
    }
  });
}

NodePtr divide(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("divide: shape mismatch");
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    const std::size_t m = n.grad.values.size();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) a->grad.values[i] += n.grad.values[i] / b->value.values[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double bv = b->value.values[i];
        b->grad.values[i] -= n.grad.values[i] * a->value.values[i] / (bv * bv);
      }
    }
  });
}

NodePtr affine(const NodePtr& a, double scale, double shift) {
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = scale * a->value[i] + shift;
  return make_node(std::move(out), {a}, [a, scale](Node& n) {
    a->ensure_grad();
    kernels::axpy(scale, n.grad.data(), a->grad.data(), n.grad.numel());
  });
}

NodePtr scale_by(const NodePtr& x, const NodePtr& s) {
  if (s->value.numel() != 1) throw std::invalid_argument("scale_by: scale must be a scalar");
  const double sv = s->value.values[0];
  Tensor out(x->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = sv * x->value[i];
  return make_node(std::move(out), {x, s}, [x, s, sv](Node& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      kernels::axpy(sv, n.grad.data(), x->grad.data(), n.grad.numel());
    }
    if (s->requires_grad) {
      s->ensure_grad();
      s->grad.values[0] += kernels::dot(n.grad.data(), x->value.data(), n.grad.numel());
    }
  });
}

NodePtr relu(const NodePtr& a) {
  Tensor out(a->value.shape);
  kernels::relu(a->value.data(), out.data(), out.numel());
  return make_node(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    kernels::relu_backward(a->value.data(), n.grad.data(), a->grad.data(), n.grad.numel());
  });
}

NodePtr sigmoid(const NodePtr& a) {
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double x = a->value[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_node(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.values.size(); ++i) {
      const double y = n.value.values[i];
      a->grad.values[i] += n.grad.values[i] * y * (1.0 - y);
    }
  });
}

NodePtr log(const NodePtr& a) {
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a->value[i]);
  return make_node(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.values.size(); ++i)
      a->grad.values[i] += n.grad.values[i] / a->value.values[i];
  });
}

NodePtr pow_const(const NodePtr& a, double e) {
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(a->value[i], e);
  return make_node(std::move(out), {a}, [a, e](Node& n) {
    a->ensure_grad();
    if (e == 0.0) return;
    for (std::size_t i = 0; i < n.grad.values.size(); ++i)
      a->grad.values[i] += n.grad.values[i] * e * std::pow(a->value.values[i], e - 1.0);
  });
}

NodePtr clamp(const NodePtr& a, double lo, double hi) {
  Tensor out(a->value.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, a->value[i]));
  return make_node(std::move(out), {a}, [a, lo, hi](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.values.size(); ++i) {
      const double x = a->value.values[i];
      if (x > lo && x < hi) a->grad.values[i] += n.grad.values[i];
    }
  });
}

NodePtr sum_all(const NodePtr& a) {
  Tensor out = Tensor::scalar(kernels::sum(a->value.data(), a->value.numel()));
  return make_node(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    const double g = n.grad.values[0];
    for (auto& v : a->grad.values) v += g;
  });
}

NodePtr mean_all(const NodePtr& a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  Tensor out = Tensor::scalar(kernels::sum(a->value.data(), a->value.numel()) * inv);
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    a->ensure_grad();
    const double g = n.grad.values[0] * inv;
    for (auto& v : a->grad.values) v += g;
  });
}

NodePtr reshape(const NodePtr& a, std::vector<int> shape) {
  if (Tensor::count(shape) != a->value.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), a->value.values);
  return make_node(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    kernels::axpy(1.0, n.grad.data(), a->grad.data(), n.grad.numel());
  });
}

NodePtr concat_channels(const NodePtr& a, const NodePtr& b) {
  const Tensor &av = a->value, &bv = b->value;
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[1] != bv.shape[1] || av.shape[2] != bv.shape[2])
    throw std::invalid_argument("concat_channels: incompatible shapes");
  Tensor out({av.shape[0] + bv.shape[0], av.shape[1], av.shape[2]});
  std::copy(av.values.begin(), av.values.end(), out.values.begin());
  std::copy(bv.values.begin(), bv.values.end(), out.values.begin() + av.numel());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    const std::size_t na = a->value.values.size();
    if (a->requires_grad) {
      a->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), a->grad.data(), na);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      kernels::axpy(1.0, n.grad.data() + na, b->grad.data(), b->value.values.size());
    }
  });
}

NodePtr concat_rows(const NodePtr& a, const NodePtr& b) {
  const Tensor &av = a->value, &bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[1])
    throw std::invalid_argument("concat_rows: incompatible shapes");
  Tensor out({av.shape[0] + bv.shape[0], av.shape[1]});
  std::copy(av.values.begin(), av.values.end(), out.values.begin());
  std::copy(bv.values.begin(), bv.values.end(), out.values.begin() + av.numel());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    const std::size_t na = a->value.values.size();
    if (a->requires_grad) {
      a->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), a->grad.data(), na);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      kernels::axpy(1.0, n.grad.data() + na, b->grad.data(), b->value.values.size());
    }
  });
}

NodePtr slice_rows(const NodePtr& a, int r0, int r1) {
  const Tensor& av = a->value;
  if (av.rank() != 2 || r0 < 0 || r1 > av.shape[0] || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range");
  const int cols = av.shape[1];
  Tensor out({r1 - r0, cols});
  std::copy(av.values.begin() + static_cast<std::size_t>(r0) * cols,
            av.values.begin() + static_cast<std::size_t>(r1) * cols, out.values.begin());
  return make_node(std::move(out), {a}, [a, r0, cols](Node& n) {
    a->ensure_grad();
    kernels::axpy(1.0, n.grad.data(), a->grad.data() + static_cast<std::size_t>(r0) * cols,
                  n.grad.values.size());
  });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor &av = a->value, &bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " * " + bv.shape_str());
  const int m = av.shape[0], k = av.shape[1], n2 = bv.shape[1];
  Tensor out({m, n2});
  kernels::gemm(m, n2, k, av.data(), bv.data(), out.data(), false);
  return make_node(std::move(out), {a, b}, [a, b, m, k, n2](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      gemm_nt(m, k, n2, n.grad.data(), b->value.data(), a->grad.data(), true);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      gemm_tn(k, n2, m, a->value.data(), n.grad.data(), b->grad.data(), true);
    }
  });
}

NodePtr transpose(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
  const int r = av.shape[0], c = av.shape[1];
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at2(j, i) = av.at2(i, j);
  return make_node(std::move(out), {a}, [a, r, c](Node& n) {
    a->ensure_grad();
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) a->grad.at2(i, j) += n.grad.at2(j, i);
  });
}

NodePtr softmax_rows(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 only");
  const int r = av.shape[0], c = av.shape[1];
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = av.at2(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, av.at2(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += (out.at2(i, j) = std::exp(av.at2(i, j) - mx));
    for (int j = 0; j < c; ++j) out.at2(i, j) /= z;
  }
  return make_node(std::move(out), {a}, [a, r, c](Node& n) {
    a->ensure_grad();
    for (int i = 0; i < r; ++i) {
      double dotv = 0.0;
      for (int j = 0; j < c; ++j) dotv += n.grad.at2(i, j) * n.value.at2(i, j);
      for (int j = 0; j < c; ++j)
        a->grad.at2(i, j) += n.value.at2(i, j) * (n.grad.at2(i, j) - dotv);
    }
  });
}

NodePtr layer_norm_rows(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2) throw std::invalid_argument("layer_norm_rows: rank-2 only");
  const int r = xv.shape[0], c = xv.shape[1];
  if (gamma->value.shape != std::vector<int>{c} || beta->value.shape != std::vector<int>{c})
    throw std::invalid_argument("layer_norm_rows: gamma/beta must have row width");
  Tensor out({r, c});
  Tensor norm({r, c});
  std::vector<double> inv_sigma(r);
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xv.at2(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = xv.at2(i, j) - mu;
      var += d * d;
    }
    var /= c;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      norm.at2(i, j) = (xv.at2(i, j) - mu) * inv_sigma[i];
      out.at2(i, j) = gamma->value[j] * norm.at2(i, j) + beta->value[j];
    }
  }
  auto norm_keep = std::make_shared<Tensor>(std::move(norm));
  auto inv_keep = std::make_shared<std::vector<double>>(std::move(inv_sigma));
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, r, c, norm_keep, inv_keep](Node& n) {
    const Tensor& y = *norm_keep;
    if (gamma->requires_grad) {
      gamma->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gamma->grad[j] += n.grad.at2(i, j) * y.at2(i, j);
    }
    if (beta->requires_grad) {
      beta->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) beta->grad[j] += n.grad.at2(i, j);
    }
    if (x->requires_grad) {
      x->ensure_grad();
      for (int i = 0; i < r; ++i) {
        double mean_g = 0.0, mean_gy = 0.0;
        for (int j = 0; j < c; ++j) {
          const double g = n.grad.at2(i, j) * gamma->value[j];
          mean_g += g;
          mean_gy += g * y.at2(i, j);
        }
        mean_g /= c;
        mean_gy /= c;
        for (int j = 0; j < c; ++j) {
          const double g = n.grad.at2(i, j) * gamma->value[j];
          x->grad.at2(i, j) += (g - mean_g - y.at2(i, j) * mean_gy) * (*inv_keep)[i];
        }
      }
    }
  });
}

NodePtr add_row_vector(const NodePtr& m, const NodePtr& v) {
  const Tensor& mv = m->value;
  if (mv.rank() != 2 || v->value.shape != std::vector<int>{mv.shape[1]})
    throw std::invalid_argument("add_row_vector: incompatible shapes");
  const int r = mv.shape[0], c = mv.shape[1];
  Tensor out({r, c});
  for (int i = 0; i < r; ++i)
    kernels::add(mv.data() + static_cast<std::size_t>(i) * c, v->value.data(),
                 out.data() + static_cast<std::size_t>(i) * c, c);
  return make_node(std::move(out), {m, v}, [m, v, r, c](Node& n) {
    if (m->requires_grad) {
      m->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), m->grad.data(), n.grad.values.size());
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (int i = 0; i < r; ++i)
        kernels::axpy(1.0, n.grad.data() + static_cast<std::size_t>(i) * c, v->grad.data(), c);
    }
  });
}

NodePtr add_channel_bias(const NodePtr& x, const NodePtr& v) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || v->value.shape != std::vector<int>{xv.shape[0]})
    throw std::invalid_argument("add_channel_bias: incompatible shapes");
  const int c = xv.shape[0];
  const std::size_t hw = static_cast<std::size_t>(xv.shape[1]) * xv.shape[2];
  Tensor out(xv.shape);
  for (int ic = 0; ic < c; ++ic) {
    const double bias = v->value[ic];
    const double* src = xv.data() + ic * hw;
    double* dst = out.data() + ic * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bias;
  }
  return make_node(std::move(out), {x, v}, [x, v, c, hw](Node& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      kernels::axpy(1.0, n.grad.data(), x->grad.data(), n.grad.values.size());
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (int ic = 0; ic < c; ++ic)
        v->grad[ic] += kernels::sum(n.grad.data() + ic * hw, hw);
    }
  });
}

NodePtr gap_spatial(const NodePtr& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("gap_spatial: rank-3 only");
  const int c = xv.shape[0];
  const std::size_t hw = static_cast<std::size_t>(xv.shape[1]) * xv.shape[2];
  const double inv = 1.0 / static_cast<double>(hw);
  Tensor out({c});
  for (int ic = 0; ic < c; ++ic) out[ic] = kernels::sum(xv.data() + ic * hw, hw) * inv;
  return make_node(std::move(out), {x}, [x, c, hw, inv](Node& n) {
    x->ensure_grad();
    for (int ic = 0; ic < c; ++ic) {
      const double g = n.grad[ic] * inv;
      double* dst = x->grad.data() + ic * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

NodePtr chw_to_rows(const NodePtr& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("chw_to_rows: rank-3 only");
  const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  const int nrows = h * w;
  Tensor out({nrows, c});
  for (int ic = 0; ic < c; ++ic)
    for (int p = 0; p < nrows; ++p) out.at2(p, ic) = xv.values[static_cast<std::size_t>(ic) * nrows + p];
  return make_node(std::move(out), {x}, [x, c, nrows](Node& n) {
    x->ensure_grad();
    for (int ic = 0; ic < c; ++ic)
      for (int p = 0; p < nrows; ++p)
        x->grad.values[static_cast<std::size_t>(ic) * nrows + p] += n.grad.at2(p, ic);
  });
}

NodePtr rows_to_chw(const NodePtr& m, int c, int h, int w) {
  const Tensor& mv = m->value;
  if (mv.rank() != 2 || mv.shape[0] != h * w || mv.shape[1] != c)
    throw std::invalid_argument("rows_to_chw: incompatible shapes");
  const int nrows = h * w;
  Tensor out({c, h, w});
  for (int ic = 0; ic < c; ++ic)
    for (int p = 0; p < nrows; ++p) out.values[static_cast<std::size_t>(ic) * nrows + p] = mv.at2(p, ic);
  return make_node(std::move(out), {m}, [m, c, nrows](Node& n) {
    m->ensure_grad();
    for (int ic = 0; ic < c; ++ic)
      for (int p = 0; p < nrows; ++p)
        m->grad.at2(p, ic) += n.grad.values[static_cast<std::size_t>(ic) * nrows + p];
  });
}

NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad) {
  const Tensor &xv = x->value, &wv = w->value;
  if (xv.rank() != 3 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: expects CHW input and OIHW weights");
  if (wv.shape[1] != xv.shape[0])
    throw std::invalid_argument("conv2d: input has " + std::to_string(xv.shape[0]) +
                                " channels, weights expect " + std::to_string(wv.shape[1]));
  const int oc = wv.shape[0], ic = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3];
  if (b->value.shape != std::vector<int>{oc}) throw std::invalid_argument("conv2d: bad bias shape");
  const int h = xv.shape[1], wd = xv.shape[2];
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");

  auto cols = std::make_shared<std::vector<double>>();
  im2col(xv, kh, kw, stride, pad, oh, ow, *cols);
  Tensor out({oc, oh, ow});
  const int ckk = ic * kh * kw, ohw = oh * ow;
  kernels::gemm(oc, ohw, ckk, wv.data(), cols->data(), out.data(), false);
  for (int o = 0; o < oc; ++o) {
    double* dst = out.data() + static_cast<std::size_t>(o) * ohw;
    const double bias = b->value[o];
    for (int i = 0; i < ohw; ++i) dst[i] += bias;
  }
  return make_node(std::move(out), {x, w, b},
                   [x, w, b, cols, stride, pad, oc, ic, kh, kw, oh, ow, ckk, ohw](Node& n) {
    if (b->requires_grad) {
      b->ensure_grad();
      for (int o = 0; o < oc; ++o)
        b->grad[o] += kernels::sum(n.grad.data() + static_cast<std::size_t>(o) * ohw, ohw);
    }
    if (w->requires_grad) {
      w->ensure_grad();
      gemm_nt(oc, ckk, ohw, n.grad.data(), cols->data(), w->grad.data(), true);
    }
    if (x->requires_grad) {
      x->ensure_grad();
      std::vector<double> dcols(static_cast<std::size_t>(ckk) * ohw);
      gemm_tn(ckk, ohw, oc, w->value.data(), n.grad.data(), dcols.data(), false);
      col2im_accum(dcols, ic, x->value.shape[1], x->value.shape[2], kh, kw, stride, pad, oh, ow,
                   x->grad.data());
    }
  });
}

NodePtr conv_transpose2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride,
                         int pad) {
  const Tensor &xv = x->value, &wv = w->value;
  if (xv.rank() != 3 || wv.rank() != 4)
    throw std::invalid_argument("conv_transpose2d: expects CHW input and IOHW weights");
  if (wv.shape[0] != xv.shape[0])
    throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int ic = wv.shape[0], oc = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3];
  if (b->value.shape != std::vector<int>{oc})
    throw std::invalid_argument("conv_transpose2d: bad bias shape");
  const int h = xv.shape[1], wd = xv.shape[2];
  const int oh = (h - 1) * stride + kh - 2 * pad, ow = (wd - 1) * stride + kw - 2 * pad;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv_transpose2d: output would be empty");
  const int okk = oc * kh * kw, hw = h * wd;

  // cols[(o,kh,kw), (h,w)] = sum_ic W[ic,o,kh,kw] * X[ic,h,w], then scatter.
  std::vector<double> cols(static_cast<std::size_t>(okk) * hw);
  gemm_tn(okk, hw, ic, wv.data(), xv.data(), cols.data(), false);
  Tensor out({oc, oh, ow});
  for (int o = 0; o < oc; ++o) {
    const double bias = b->value[o];
    double* base = out.data() + static_cast<std::size_t>(o) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) base[i] = bias;
  }
  std::size_t row = 0;
  for (int o = 0; o < oc; ++o)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s, ++row) {
        const double* src = cols.data() + row * hw;
        double* base = out.data() + static_cast<std::size_t>(o) * oh * ow;
        for (int iy = 0; iy < h; ++iy) {
          const int oy = iy * stride + r - pad;
          if (oy < 0 || oy >= oh) continue;
          for (int ix = 0; ix < wd; ++ix) {
            const int ox = ix * stride + s - pad;
            if (ox >= 0 && ox < ow) base[oy * ow + ox] += src[iy * wd + ix];
          }
        }
      }
  return make_node(std::move(out), {x, w, b},
                   [x, w, b, stride, pad, ic, oc, kh, kw, oh, ow, hw, okk](Node& n) {
    const int h = x->value.shape[1], wd = x->value.shape[2];
    // Gather dOut back into column layout shared by both parent grads;
    // positions clipped by the padding see zero gradient.
    std::vector<double> dcols(static_cast<std::size_t>(okk) * hw, 0.0);
    std::size_t row = 0;
    for (int o = 0; o < oc; ++o)
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s, ++row) {
          double* dst = dcols.data() + row * hw;
          const double* base = n.grad.data() + static_cast<std::size_t>(o) * oh * ow;
          for (int iy = 0; iy < h; ++iy) {
            const int oy = iy * stride + r - pad;
            if (oy < 0 || oy >= oh) continue;
            for (int ix = 0; ix < wd; ++ix) {
              const int ox = ix * stride + s - pad;
              if (ox >= 0 && ox < ow) dst[iy * wd + ix] = base[oy * ow + ox];
            }
          }
        }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int o = 0; o < oc; ++o)
        b->grad[o] += kernels::sum(n.grad.data() + static_cast<std::size_t>(o) * oh * ow,
                                   static_cast<std::size_t>(oh) * ow);
    }
    if (x->requires_grad) {
      x->ensure_grad();
      kernels::gemm(ic, hw, okk, w->value.data(), dcols.data(), x->grad.data(), true);
    }
    if (w->requires_grad) {
      w->ensure_grad();
      gemm_nt(ic, okk, hw, x->value.data(), dcols.data(), w->grad.data(), true);
    }
  });
}

NodePtr bilinear_upsample(const NodePtr& x, int out_h, int out_w) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("bilinear_upsample: rank-3 only");
  const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  struct Tap {
    int lo, hi;
    double t;
  };
  std::vector<Tap> ty(out_h), tx(out_w);
  auto make_taps = [](int in, int out, double s, std::vector<Tap>& taps) {
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * s - 0.5;
      src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
      const int lo = static_cast<int>(src);
      taps[o] = {lo, std::min(lo + 1, in - 1), src - lo};
    }
  };
  make_taps(h, out_h, sy, ty);
  make_taps(w, out_w, sx, tx);
  Tensor out({c, out_h, out_w});
  for (int ic = 0; ic < c; ++ic)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap &a = ty[oy], &bx = tx[ox];
        const double v00 = xv.at3(ic, a.lo, bx.lo), v01 = xv.at3(ic, a.lo, bx.hi);
        const double v10 = xv.at3(ic, a.hi, bx.lo), v11 = xv.at3(ic, a.hi, bx.hi);
        out.at3(ic, oy, ox) = (1 - a.t) * ((1 - bx.t) * v00 + bx.t * v01) +
                              a.t * ((1 - bx.t) * v10 + bx.t * v11);
      }
  auto ty_keep = std::make_shared<std::vector<Tap>>(std::move(ty));
  auto tx_keep = std::make_shared<std::vector<Tap>>(std::move(tx));
  return make_node(std::move(out), {x}, [x, c, out_h, out_w, ty_keep, tx_keep](Node& n) {
    x->ensure_grad();
    for (int ic = 0; ic < c; ++ic)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap &a = (*ty_keep)[oy], &bx = (*tx_keep)[ox];
          const double g = n.grad.at3(ic, oy, ox);
          x->grad.at3(ic, a.lo, bx.lo) += (1 - a.t) * (1 - bx.t) * g;
          x->grad.at3(ic, a.lo, bx.hi) += (1 - a.t) * bx.t * g;
          x->grad.at3(ic, a.hi, bx.lo) += a.t * (1 - bx.t) * g;
          x->grad.at3(ic, a.hi, bx.hi) += a.t * bx.t * g;
        }
  });
}

}  // namespace wavedg::ag
