#pragma once

#include <vector>

#include "msit/ops.hpp"
#include "msit/tensor.hpp"

namespace msit::ref {

// Serial reference kernels. Deliberately written as direct transcriptions of
// the definitions (nested loops, explicit weight enumeration, extended
// precision where it matters) so they can stand as independent oracles for
// the parallel kernels in msit::ops and as the baseline for the benchmark.

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, PadMode pad);
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, PadMode pad);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& t); // long-double accumulation
double gelu_quadrature(double x);        // x * Phi(x) with Phi integrated numerically
Tensor grid_sample(const Tensor& field, const std::vector<Coord>& coords, SampleMode mode);
Tensor bicubic_resize_to(const Tensor& image, int out_h, int out_w); // direct 4x4, non-separable

} // namespace msit::ref
