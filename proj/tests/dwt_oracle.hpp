#pragma once

// Test-only inverse of the reference DWT (even extents): exact adjoint of
// the orthonormal analysis transform, used for the perfect-reconstruction
// oracle. Not part of the library surface.

#include <stdexcept>
#include <vector>

#include "wavedg/dwt.hpp"
#include "wavedg/tensor.hpp"

namespace wavedg::testutil {

inline Tensor idwt_reference(const FrequencySubbands& sb, const WaveletFilters& f) {
  const int c = sb.ll.shape[0], oh = sb.ll.shape[1], ow = sb.ll.shape[2];
  const int h = 2 * oh, w = 2 * ow;
  const int taps = static_cast<int>(f.phi.size());
  Tensor out({c, h, w});

  // Undo the horizontal pass per subband pair, then the vertical pass.
  auto upsample_cols = [&](const Tensor& lo, const Tensor& hi, int ch, std::vector<double>& dst) {
    // dst is (oh x w); transposed-filter accumulation.
    dst.assign(static_cast<std::size_t>(oh) * w, 0.0);
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int t = 0; t < taps; ++t) {
          const int col = 2 * j + t;
          if (col >= w) continue;
          dst[static_cast<std::size_t>(i) * w + col] +=
              f.phi[t] * lo.at3(ch, i, j) + f.psi[t] * hi.at3(ch, i, j);
        }
  };

  std::vector<double> lo_rows, hi_rows;
  for (int ch = 0; ch < c; ++ch) {
    upsample_cols(sb.ll, sb.hl, ch, lo_rows);  // phi-vertical part
    upsample_cols(sb.lh, sb.hh, ch, hi_rows);  // psi-vertical part
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < w; ++j)
        for (int t = 0; t < taps; ++t) {
          const int row = 2 * i + t;
          if (row >= h) continue;
          out.at3(ch, row, j) += f.phi[t] * lo_rows[static_cast<std::size_t>(i) * w + j] +
                                 f.psi[t] * hi_rows[static_cast<std::size_t>(i) * w + j];
        }
  }
  return out;
}

}  // namespace wavedg::testutil
