#pragma once

#include <string>

#include "msit/tensor.hpp"

namespace msit::imageio {

// binary PPM (P6, 8-bit) -> [1,3,H,W] in [0,1]
Tensor read_ppm(const std::string& path);
// clamp to [0,1], quantize round(v*255), write P6
void write_ppm(const Tensor& img, const std::string& path);

// grayscale PGM (P5, 8-bit) for error maps, same quantization
Tensor read_pgm(const std::string& path); // -> [1,1,H,W]
void write_pgm(const Tensor& map, const std::string& path);

} // namespace msit::imageio
