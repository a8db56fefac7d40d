#include "msit/reparam.hpp"

#include <stdexcept>

#include "msit/model.hpp"

namespace msit::reparam {

const char* stage_name(StageTag s) {
    switch (s) {
        case StageTag::stage1_plain: return "stage1";
        case StageTag::stage2_rim: return "stage2";
        case StageTag::folded: return "folded";
    }
    return "stage1";
}

StageTag stage_from_name(const std::string& s) {
    if (s == "stage1") return StageTag::stage1_plain;
    if (s == "stage2") return StageTag::stage2_rim;
    if (s == "folded") return StageTag::folded;
    throw std::invalid_argument("unknown stage name: " + s);
}

RimParams make_rim_params(int m, bool linear_branch) {
    if (m < 1) throw std::invalid_argument("rim: kernel size must be >= 1");
    RimParams rim;
    rim.linear_branch = linear_branch;
    rim.dw = Var(Tensor(1, 1, 3, 3), true);
    if (linear_branch) {
        Tensor eye = Tensor::matrix(m * m, m * m);
        for (int i = 0; i < m * m; ++i) eye.mat(i, i) = 1.0;
        rim.lin_w = Var(eye, true);
        rim.lin_b = Var(Tensor::matrix(1, m * m), true);
    }
    return rim;
}

Var rim_remap(const Var& w, const RimParams& rim) {
    const int co = w.value().n(), ci = w.value().c(), m = w.value().h();
    if (m < 1) throw std::invalid_argument("rim_remap: empty kernel");
    Var img = autodiff::reshape(w, 1, co * ci, m, m);
    Var dwk = autodiff::expand_group_kernels(rim.dw, co * ci);
    Var dconv = autodiff::depthwise_conv2d(img, dwk, PadMode::zero);
    Var branch;
    if (rim.linear_branch) {
        Var rows = autodiff::reshape(img, 1, 1, co * ci, m * m);
        Var attn = autodiff::add_row_bias(autodiff::matmul(rows, rim.lin_w), rim.lin_b);
        branch = autodiff::hadamard(dconv, autodiff::reshape(attn, 1, co * ci, m, m));
    } else {
        branch = dconv;
    }
    return autodiff::reshape(autodiff::add(img, branch), co, ci, m, m);
}

Tensor rim_remap_value(const Tensor& w, const RimParams& rim) {
    autodiff::NoGradGuard ng;
    return rim_remap(Var(w, false), rim).value();
}

std::int64_t rim_param_count(int m, bool linear_branch) {
    const std::int64_t m2 = static_cast<std::int64_t>(m) * m;
    return 9 + (linear_branch ? m2 * m2 + m2 : 0);
}

namespace {

std::string rim_base(const std::string& conv_weight_name) {
    // "encoder.stem.weight" -> "rim.encoder.stem"
    const std::string suffix = ".weight";
    std::string base = conv_weight_name;
    if (base.size() > suffix.size() &&
        base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0)
        base.resize(base.size() - suffix.size());
    return "rim." + base;
}

} // namespace

void wrap_model_with_rim(pipeline::SrModel& model) {
    if (model.stage != StageTag::stage1_plain)
        throw std::invalid_argument("wrap_model_with_rim: model is not in stage 1");
    for (const auto& conv : pipeline::eligible_convs(model.cfg)) {
        Param* p = model.params.find(conv.name);
        if (!p) throw std::logic_error("wrap: missing parameter " + conv.name);
        p->set_trainable(false);
        WrappedConv slot;
        slot.name = conv.name;
        slot.ksize = conv.ksize;
        slot.weight = p->var;
        slot.rim = make_rim_params(conv.ksize, model.cfg.rim_linear_branch);
        const std::string base = rim_base(conv.name);
        model.params.adopt(base + ".dw", "rim", slot.rim.dw);
        if (model.cfg.rim_linear_branch) {
            model.params.adopt(base + ".lin.weight", "rim", slot.rim.lin_w);
            model.params.adopt(base + ".lin.bias", "rim", slot.rim.lin_b);
        }
        model.rim_slots.push_back(std::move(slot));
    }
    model.stage = StageTag::stage2_rim;
}

void unwrap_model(pipeline::SrModel& model) {
    if (model.stage != StageTag::stage2_rim)
        throw std::invalid_argument("unwrap_model: model is not in stage 2");
    model.params.remove_prefix("rim.");
    for (const auto& slot : model.rim_slots) model.params.find(slot.name)->set_trainable(true);
    model.rim_slots.clear();
    model.stage = StageTag::stage1_plain;
}

pipeline::SrModel fold_for_inference(const pipeline::SrModel& model) {
    if (model.stage != StageTag::stage2_rim)
        throw std::invalid_argument("fold_for_inference: model is not in stage 2");
    pipeline::SrModel folded = pipeline::build_model(model.cfg, model.seed);
    for (auto& p : folded.params.all())
        p.var.value_mut() = model.params.find(p.name)->var.value();
    for (const auto& slot : model.rim_slots)
        folded.params.find(slot.name)->var.value_mut() =
            rim_remap_value(slot.weight.value(), slot.rim);
    folded.stage = StageTag::folded;
    return folded;
}

pipeline::SrModel clone_model(const pipeline::SrModel& model) {
    pipeline::SrModel copy = pipeline::build_model(model.cfg, model.seed);
    if (model.stage == StageTag::stage2_rim) wrap_model_with_rim(copy);
    copy.stage = model.stage;
    for (auto& p : copy.params.all()) {
        const Param* src = model.params.find(p.name);
        if (!src) throw std::logic_error("clone: missing parameter " + p.name);
        p.var.value_mut() = src->var.value();
        p.set_trainable(src->trainable);
    }
    return copy;
}

std::int64_t param_count(const pipeline::SrModel& model, bool trainable_only) {
    return model.params.count_scalars(trainable_only);
}

std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const pipeline::SrModel& model,
                                                                  bool trainable_only) {
    return model.params.breakdown(trainable_only);
}

} // namespace msit::reparam
