#pragma once

#include <string>

#include "wavedg/tensor.hpp"

namespace wavedg {

// Lossless 8-bit image I/O. Format is chosen by extension: .png, .ppm (RGB),
// .pgm (gray). Loaded values are scaled to [0,1]; 3-channel loads replicate
// gray planes when needed.

Tensor load_image_rgb(const std::string& path);   // {3,H,W}
Tensor load_image_gray(const std::string& path);  // {H,W}, first channel of color inputs

void save_image_rgb(const std::string& path, const Tensor& image);  // {3,H,W} in [0,1]
void save_image_gray(const std::string& path, const Tensor& image); // {H,W} in [0,1]

}  // namespace wavedg
