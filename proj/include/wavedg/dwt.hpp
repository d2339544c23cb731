#pragma once

#include <vector>

#include "wavedg/tensor.hpp"

namespace wavedg {

// 1-D analysis filter pair for the separable reference transform.
struct WaveletFilters {
  std::vector<double> phi;  // low-pass
  std::vector<double> psi;  // high-pass

  static WaveletFilters haar();
  void validate() const;  // equal length, unit energy, mutually orthogonal
};

// Four half-resolution subbands of a {C,H,W} feature map. Subband naming:
// the first letter is the filter applied along the row index (vertical
// pass, runs first), the second the filter applied along the column index.
struct FrequencySubbands {
  Tensor ll, lh, hl, hh;  // each {C, ceil(H/2), ceil(W/2)}
};

// Separable stride-2 reference DWT. Odd extents use symmetric (edge
// replicating) padding; energy conservation and perfect reconstruction hold
// for even extents. Not part of the training path; this is the numerical
// oracle against which the learnable decomposition is cross-checked.
FrequencySubbands dwt_reference(const Tensor& feature, const WaveletFilters& filters);

}  // namespace wavedg
