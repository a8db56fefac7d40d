#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msit/autodiff.hpp"
#include "msit/tensor.hpp"

namespace msit::pipeline {
struct SrModel;
}

namespace msit::reparam {

using autodiff::Var;

enum class StageTag { stage1_plain, stage2_rim, folded };

const char* stage_name(StageTag s);
StageTag stage_from_name(const std::string& s);

// Remapping record for one frozen m x m convolution kernel: a shared 3x3
// kernel applied depthwise over the reshaped weight image plus a square map
// over the m^2 spatial positions. The 3x3 kernel starts at zero so the
// multiplicative branch vanishes and stage 2 opens exactly at stage-1
// behavior; the position map starts at the identity so gradients reach the
// 3x3 kernel immediately.
struct RimParams {
    Var dw;    // [1,1,3,3], shared across all C_i*C_o channels
    Var lin_w; // [1,1,m^2,m^2]
    Var lin_b; // [1,1,1,m^2]
    bool linear_branch = true; // false: DWConv-only remap (RefConv-style baseline)
};

RimParams make_rim_params(int m, bool linear_branch);

// W' = W + DWConv(W) x Linear(W) over W reshaped to [1, C_i*C_o, m, m]
Var rim_remap(const Var& w, const RimParams& rim);
Tensor rim_remap_value(const Tensor& w, const RimParams& rim);

// scalars a rim record adds for an m x m conv
std::int64_t rim_param_count(int m, bool linear_branch);

struct WrappedConv {
    std::string name; // weight parameter name of the wrapped conv
    int ksize = 3;
    Var weight; // frozen stage-1 kernel (aliases the store record)
    RimParams rim;
};

// stage transitions
void wrap_model_with_rim(pipeline::SrModel& model);
void unwrap_model(pipeline::SrModel& model);
pipeline::SrModel fold_for_inference(const pipeline::SrModel& model);

pipeline::SrModel clone_model(const pipeline::SrModel& model);

std::int64_t param_count(const pipeline::SrModel& model, bool trainable_only);
std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const pipeline::SrModel& model,
                                                                  bool trainable_only);

} // namespace msit::reparam
