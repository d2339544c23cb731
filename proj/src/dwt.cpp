#include "wavedg/dwt.hpp"

#include <cmath>
#include <stdexcept>

namespace wavedg {

WaveletFilters WaveletFilters::haar() {
  const double s = 1.0 / std::sqrt(2.0);
  return WaveletFilters{{s, s}, {s, -s}};
}

void WaveletFilters::validate() const {
  if (phi.empty() || phi.size() != psi.size())
    throw std::invalid_argument("wavelet filters: phi and psi must be non-empty and equal length");
  double ee_phi = 0.0, ee_psi = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    ee_phi += phi[i] * phi[i];
    ee_psi += psi[i] * psi[i];
    cross += phi[i] * psi[i];
  }
  const double tol = 1e-9;
  if (std::abs(ee_phi - 1.0) > tol || std::abs(ee_psi - 1.0) > tol || std::abs(cross) > tol)
    throw std::invalid_argument("wavelet filters: must be orthonormal (unit energy, zero cross)");
}

namespace {

// Symmetric (edge-replicating) index extension.
inline int reflect(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

// Filters along the row index (vertical pass) with stride 2:
// out[i][j] = sum_t f[t] * x[2i+t][j].
void filter_rows(const double* x, int h, int w, const std::vector<double>& f,
                 std::vector<double>& out, int out_h) {
  const int taps = static_cast<int>(f.size());
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = 0; t < taps; ++t) acc += f[t] * x[reflect(2 * i + t, h) * w + j];
      out[static_cast<std::size_t>(i) * w + j] = acc;
    }
}

// Filters along the column index (horizontal pass) with stride 2.
void filter_cols(const std::vector<double>& x, int h, int w, const std::vector<double>& f,
                 double* out, int out_w) {
  const int taps = static_cast<int>(f.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < out_w; ++j) {
      double acc = 0.0;
      for (int t = 0; t < taps; ++t) acc += f[t] * x[static_cast<std::size_t>(i) * w + reflect(2 * j + t, w)];
      out[static_cast<std::size_t>(i) * out_w + j] = acc;
    }
}

}  // namespace

FrequencySubbands dwt_reference(const Tensor& feature, const WaveletFilters& filters) {
  filters.validate();
  if (feature.rank() != 3)
    throw std::invalid_argument("dwt_reference: expected {C,H,W}, got " + feature.shape_str());
  const int c = feature.shape[0], h = feature.shape[1], w = feature.shape[2];
  if (h < 2 || w < 2)
    throw std::invalid_argument("dwt_reference: spatial dims must be at least 2x2");

  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  FrequencySubbands sb{Tensor({c, oh, ow}), Tensor({c, oh, ow}), Tensor({c, oh, ow}),
                       Tensor({c, oh, ow})};
  std::vector<double> lo(static_cast<std::size_t>(oh) * w), hi(static_cast<std::size_t>(oh) * w);
  for (int ic = 0; ic < c; ++ic) {
    const double* plane = feature.data() + static_cast<std::size_t>(ic) * h * w;
    filter_rows(plane, h, w, filters.phi, lo, oh);
    filter_rows(plane, h, w, filters.psi, hi, oh);
    const std::size_t off = static_cast<std::size_t>(ic) * oh * ow;
    filter_cols(lo, oh, w, filters.phi, sb.ll.data() + off, ow);
    filter_cols(lo, oh, w, filters.psi, sb.hl.data() + off, ow);
    filter_cols(hi, oh, w, filters.phi, sb.lh.data() + off, ow);
    filter_cols(hi, oh, w, filters.psi, sb.hh.data() + off, ow);
  }
  return sb;
}

}  // namespace wavedg
