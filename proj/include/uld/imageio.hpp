#pragma once

// Image files <-> {3,H,W} double tensors in [0,1]. PNG (8-bit) and binary
// PPM are supported; values are clamped to [0,1] only at write time.

#include <string>

#include "uld/tensor.hpp"

namespace uld {

Tensor<double> read_image(const std::string& path);
void write_image(const std::string& path, const Tensor<double>& image);

/// Center-aligned bilinear resize of a {C,H,W} image.
Tensor<double> resize_bilinear(const Tensor<double>& image, int out_h, int out_w);

}  // namespace uld
