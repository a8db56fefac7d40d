#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "msit/coords.hpp"
#include "msit/msno.hpp"
#include "msit/mssa.hpp"
#include "msit/params.hpp"
#include "msit/reparam.hpp"
#include "msit/tensor.hpp"

namespace msit::pipeline {

using autodiff::Var;

struct ModelConfig {
    int channels = 32;
    int encoder_blocks = 4;
    int msc_branches = 4;  // parallel MSC convolutions, kernels 3..2t+1
    int proj_branches = 4; // projection branches, kernels 1..2n-1
    int heads = 4;
    int fourier_freqs = 64;
    int neighborhood = 3;     // r, keys per query = r^2
    double logit_scale = 0.0; // 0 -> sqrt(channels/heads)
    int decoder_hidden = 256;
    int decoder_depth = 4; // hidden layers
    bool include_cell = true;
    bool use_fem = true;
    bool use_sim = true;
    int fem_stride = 1;
    bool rim_linear_branch = true;
    int chunk_size = 4096;

    double resolved_logit_scale() const;
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct SrModel {
    ModelConfig cfg;
    reparam::StageTag stage = reparam::StageTag::stage1_plain;
    std::uint64_t seed = 0;
    ParamStore params;

    Var stem_w, stem_b;
    std::vector<std::array<Var, 4>> blocks; // conv1 w/b, conv2 w/b
    Var tail_w, tail_b;

    msno::MsnoParams msno;
    mssa::MssaParams mssa;
    coords::FourierVars fourier;
    std::vector<std::pair<Var, Var>> decoder; // hidden layers then the output layer

    std::vector<reparam::WrappedConv> rim_slots; // populated in stage 2
};

SrModel build_model(const ModelConfig& cfg, std::uint64_t seed);

struct EligibleConv {
    std::string name;
    int ksize;
};
// convolutions the remapping stage may wrap: every m>=3 kernel in the
// encoder, MSC, and projection branches
std::vector<EligibleConv> eligible_convs(const ModelConfig& cfg);

// 3x3 stem -> residual blocks -> 3x3 tail; input must be at least 8x8
Var encoder_forward(const SrModel& model, const Var& img);

// MLP over attention latents (+ relative cell size when configured)
Var decoder_forward(const SrModel& model, const Var& attn_latent, coords::Cell cell, int lr_h,
                    int lr_w);

struct FieldCache {
    Var ms_latent;
    Var q_field;
    Var v_field;
};
FieldCache compute_fields(const SrModel& model, const Var& img);

// decoder residual for a query set (no skip term)
Var decode_queries(const SrModel& model, const FieldCache& fields,
                   const std::vector<Coord>& queries, coords::Cell cell, int lr_h, int lr_w);
// residual plus the per-query bilinear skip of the input image
Var predict_queries(const SrModel& model, const FieldCache& fields, const Var& img,
                    const std::vector<Coord>& queries, coords::Cell cell);

struct SrOutput {
    Tensor output;   // residual + skip, unclamped
    Tensor residual; // reshaped decoder output
    Tensor skip;     // bilinear upsample of the input
};
SrOutput assr_forward_parts(const SrModel& model, const Tensor& img, double scale_h,
                            double scale_w);
Tensor assr_forward(const SrModel& model, const Tensor& img, double scale_h, double scale_w);

// 10*log10(peak^2/MSE); identical inputs report +infinity
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// per-pixel mean absolute channel error, normalized to [0,1] by its max
Tensor error_map(const Tensor& pred, const Tensor& truth);

} // namespace msit::pipeline
