#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavedg {

// Dense row-major double tensor, rank 0..4. Rank-0 tensors (shape {}) hold a
// single scalar and are used for loss values and learnable scalars.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), values(count(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != count(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.values.begin(), t.values.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double* data() { return values.data(); }
  const double* data() const { return values.data(); }

  double& operator[](std::int64_t i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return values[static_cast<std::size_t>(i)]; }

  // 3-D (c,h,w) accessors for feature maps.
  double& at3(int c, int h, int w) {
    return values[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  double at3(int c, int h, int w) const {
    return values[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  // 2-D (r,c) accessors for matrices.
  double& at2(int r, int c) { return values[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at2(int r, int c) const { return values[static_cast<std::size_t>(r) * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void require_shape(const Tensor& t, const std::vector<int>& s, const char* what) {
  if (t.shape != s)
    throw std::invalid_argument(std::string(what) + ": expected shape " + Tensor(s).shape_str() +
                                ", got " + t.shape_str());
}

}  // namespace wavedg
