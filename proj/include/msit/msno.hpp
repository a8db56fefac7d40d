#pragma once

#include <array>
#include <vector>

#include "msit/autodiff.hpp"
#include "msit/rng.hpp"
#include "msit/tensor.hpp"

namespace msit::msno {

using autodiff::Var;

// Eight-direction circular pixel shifting over channel groups. The one-hot
// kernels are ordinary learnable tensors initialized to the shift pattern;
// the direct/conv equivalence holds at initialization.
struct FemParams {
    std::array<int, 8> strides{}; // per direction group, >= 0
    int kernel_size = 1;          // 2*max_stride+1
    Var kernels;                  // [8,1,k,k]
};

// direction order: up, up-left, up-right, down, down-left, down-right, left, right
extern const std::array<std::array<int, 2>, 8> fem_directions; // {dy,dx}

Tensor make_fem_kernels(const std::array<int, 8>& strides);
FemParams make_fem_params(const std::array<int, 8>& strides);

// index-roll route: pure permutation of values
Tensor fem_shift_direct(const Tensor& z, const std::array<int, 8>& strides);
// designed-kernel route: depthwise circular convolution
Var fem_shift_conv(const Var& z, const FemParams& params);

// t parallel convolutions over contiguous channel groups, kernels 3,5,...,2t+1
struct MscParams {
    int branches = 1;
    std::vector<Var> kernels; // branch i: [C/t, C/t, 2i+1, 2i+1]
    std::vector<Var> biases;  // [1,1,1,C/t]
};
MscParams make_msc_params(int t, int channels, Rng& rng);
std::vector<Var> msc_apply(const Var& z, const MscParams& params);

// per-scale pointwise mix -> GELU -> concat -> cross-scale pointwise mix,
// modulated by a Hadamard map generated from the concatenated branch outputs
struct SimParams {
    std::vector<Var> scale_mix_w; // per group, [C/t, C/t, 1, 1]
    std::vector<Var> scale_mix_b;
    Var cross_mix_w; // [C, C, 1, 1]
    Var cross_mix_b;
    Var modulation_w; // [C, C, 1, 1]
    Var modulation_b;
    bool identity_activation = false; // test hook for the linearity property
};
SimParams make_sim_params(int t, int channels, Rng& rng);
Var sim_merge(const std::vector<Var>& groups, const SimParams& params, const Var& modulation_source);

struct MsnoParams {
    bool use_fem = true;
    bool use_sim = true;
    FemParams fem;
    MscParams msc;
    SimParams sim;
    Var merge_w; // plain 1x1 merge when use_sim is off
    Var merge_b;
};
Var msno_forward(const Var& z, const MsnoParams& params);

} // namespace msit::msno
