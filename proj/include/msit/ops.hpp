#pragma once

#include <optional>
#include <vector>

#include "msit/tensor.hpp"

namespace msit {

struct Coord {
    double y = 0.0;
    double x = 0.0;
};

enum class SampleMode { nearest, bilinear };

// Cell-center coordinate convention: grid point i of an extent-n axis sits at
// -1 + (2i+1)/n. These helpers map between normalized coordinates and
// fractional lattice indices.
namespace coordmap {

inline double cell_center(int i, int n) {
    return -1.0 + (2.0 * i + 1.0) / n;
}

// fractional lattice index of a normalized coordinate, clamped to the border.
// Values within 1e-9 of a lattice point snap onto it so that queries at exact
// cell centers reproduce stored values bit for bit.
double continuous_index(double coord, int n);

// nearest lattice index; equidistant cases resolve toward the smaller index
int nearest_index(double coord, int n);

} // namespace coordmap

namespace ops {

// 2-D cross-correlation, stride 1, odd kernel, (k-1)/2 padding (size preserving).
// kernel is [Cout, Cin, k, k]; bias, when present, is [1,1,1,Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, PadMode pad);

// per-channel convolution; kernel is [C, 1, k, k]
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, PadMode pad);

// [1,1,R,K] x [1,1,K,C] -> [1,1,R,C]
Tensor matmul(const Tensor& a, const Tensor& b);

// softmax over the last (W) axis, overflow-safe via max subtraction
Tensor softmax_lastdim(const Tensor& t);

// exact-erf GELU: x * Phi(x)
Tensor gelu(const Tensor& t);
double gelu_scalar(double x);
double gelu_derivative(double x);

// sample a [1,C,H,W] field at normalized (y,x) coordinates -> [1,1,Q,C].
// Out-of-range coordinates clamp to the border.
Tensor grid_sample(const Tensor& field, const std::vector<Coord>& coords, SampleMode mode);

// resize to round(scale * extent) through grid_sample(bilinear) on the
// output's cell-center grid
Tensor bilinear_resize(const Tensor& image, double scale_h, double scale_w);

// Catmull-Rom cubic (a = -0.5), separable, edge replication at borders
Tensor bicubic_resize(const Tensor& image, double scale_h, double scale_w);
Tensor bicubic_resize_to(const Tensor& image, int out_h, int out_w);

// round(scale * n) with round(x) = floor(x + 0.5)
int scaled_extent(double scale, int n);

// ---- backward kernels (reverse-mode companions of the ops above) ----

Tensor conv2d_grad_input(const Tensor& gout, const Tensor& kernel, PadMode pad);
Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& input, int k, PadMode pad);
Tensor conv2d_grad_bias(const Tensor& gout);

Tensor depthwise_grad_input(const Tensor& gout, const Tensor& kernel, PadMode pad);
Tensor depthwise_grad_kernel(const Tensor& gout, const Tensor& input, int k, PadMode pad);

// scatter companion of grid_sample(bilinear): accumulates d(out)/d(field)
Tensor grid_sample_bilinear_grad_field(const Tensor& gout, const std::array<int, 4>& field_shape,
                                       const std::vector<Coord>& coords);

} // namespace ops
} // namespace msit
