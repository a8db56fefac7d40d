#pragma once

#include <vector>

#include "msit/autodiff.hpp"
#include "msit/coords.hpp"
#include "msit/rng.hpp"
#include "msit/tensor.hpp"

namespace msit::mssa {

using autodiff::Var;

// Parallel projection branches (kernels 1,3,...,2n-1) fused by a pointwise
// map; queries attend to their r x r LR neighborhood with Fourier-encoded
// relative-coordinate logit bias. Keys share the query projection field.
struct MssaParams {
    int n_proj = 1;
    int heads = 1;
    double logit_scale = 1.0;
    std::vector<Var> q_kernels, q_biases;
    std::vector<Var> v_kernels, v_biases;
    Var fuse_q_w, fuse_q_b; // [C, n*C, 1, 1]
    Var fuse_v_w, fuse_v_b;
};

MssaParams make_mssa_params(int n_proj, int channels, int heads, double logit_scale, Rng& rng);

Var multiscale_project(const Var& z, const std::vector<Var>& kernels,
                       const std::vector<Var>& biases, const Var& fuse_w, const Var& fuse_b);

struct AttentionQuery {
    std::vector<Coord> hr_coords;      // Q
    std::vector<int> anchor_indices;   // Q, flat LR indices
    std::vector<int> neighbor_indices; // Q*keys, flat LR indices
    Tensor rel_coords;                 // [Q*keys, 2] rows (dy,dx) = hr - lr(neighbor)
    int keys = 0;                      // r^2
};

AttentionQuery build_attention_query(const std::vector<Coord>& hr_queries,
                                     const coords::CoordGrid& lr_grid, int r);

struct Qkv {
    Var qhat; // [1,1,Q,C] bilinear samples of the query field
    Var khat; // [1,1,Q*keys,C] lattice gathers of the query field
    Var vhat; // [1,1,Q*keys,C] lattice gathers of the value field
};

Qkv build_qkv(const Var& q_field, const Var& v_field, const AttentionQuery& query);

// softmax(pos_logits + <qhat,khat>/M) * vhat per head, heads concatenated
Var attention_forward(const Var& qhat, const Var& khat, const Var& vhat, const Var& pos_logits,
                      int heads, double logit_scale);

Var mssa_forward(const Var& z_ms, const std::vector<Coord>& hr_queries,
                 const coords::CoordGrid& lr_grid, const coords::FourierVars& enc, int r,
                 const MssaParams& params);

} // namespace msit::mssa
