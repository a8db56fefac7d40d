#include "msit/trainer.hpp"


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace msit::trainer {

void TrainConfig::validate() const {
    if (scale_min < 1.0 || scale_max < scale_min)
        throw std::invalid_argument("train config: scale range must satisfy 1 <= min <= max");
    if (patch_lr < 8) throw std::invalid_argument("train config: patch_lr must be >= 8");
    if (steps < 0 || warmup_steps < 0) throw std::invalid_argument("train config: negative steps");
    if (base_lr < 0.0 || min_lr < 0.0 || min_lr > base_lr)
        throw std::invalid_argument("train config: rates must satisfy 0 <= min_lr <= base_lr");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
}

double lr_at_step(const TrainConfig& cfg, int step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.base_lr * (step + 1) / static_cast<double>(cfg.warmup_steps);
    const int decay_span = std::max(1, cfg.steps - cfg.warmup_steps);
    const double t = static_cast<double>(step - cfg.warmup_steps) / decay_span;
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

namespace {

Tensor hflip(const Tensor& t) {
    Tensor out = t;
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c)
            for (int y = 0; y < t.h(); ++y)
                for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
    return out;
}

Tensor vflip(const Tensor& t) {
    Tensor out = t;
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c)
            for (int y = 0; y < t.h(); ++y)
                for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, t.h() - 1 - y, x);
    return out;
}

Tensor rot90(const Tensor& t) { // square input
    Tensor out = t;
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c)
            for (int y = 0; y < t.h(); ++y)
                for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, x, t.h() - 1 - y);
    return out;
}

} // namespace

PatchSample sample_patch_pair(const Tensor& hr_image, double eta, int patch_lr, Rng& rng,
                              bool augment) {
    if (eta < 1.0) throw std::invalid_argument("sample_patch_pair: eta must be >= 1");
    const int side = static_cast<int>(std::lround(patch_lr * eta));
    const int H = hr_image.h(), W = hr_image.w();
    if (H < side || W < side)
        throw std::invalid_argument("sample_patch_pair: image smaller than the requested crop");

    const int top = rng.uniform_int(H - side + 1);
    const int left = rng.uniform_int(W - side + 1);
    Tensor crop(1, 3, side, side);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) crop.at(0, c, y, x) = hr_image.at(0, c, top + y, left + x);

    if (augment) {
        // augment the crop itself; the LR patch and the coordinate-RGB pairs
        // below then stay mutually consistent by construction
        if (rng.uniform() < 0.5) crop = hflip(crop);
        if (rng.uniform() < 0.5) crop = vflip(crop);
        if (rng.uniform() < 0.5) crop = rot90(crop);
    }

    PatchSample sample;
    sample.crop_side = side;
    sample.lr_patch = ops::bicubic_resize_to(crop, patch_lr, patch_lr);
    sample.cell = coords::make_cell(side, side);

    const int want = patch_lr * patch_lr;
    const int total = side * side;
    // partial Fisher-Yates draw of distinct pixel indices
    std::vector<int> pool(total);
    for (int i = 0; i < total; ++i) pool[i] = i;
    sample.coords.reserve(want);
    sample.targets = Tensor::matrix(want, 3);
    for (int i = 0; i < want; ++i) {
        const int j = i + rng.uniform_int(total - i);
        std::swap(pool[i], pool[j]);
        const int y = pool[i] / side, x = pool[i] % side;
        sample.coords.push_back({coordmap::cell_center(y, side), coordmap::cell_center(x, side)});
        for (int c = 0; c < 3; ++c) sample.targets.mat(i, c) = crop.at(0, c, y, x);
    }
    return sample;
}

double l1_loss(const Tensor& pred, const Tensor& target) {
    autodiff::NoGradGuard ng;
    return autodiff::l1_loss(autodiff::Var(pred), autodiff::Var(target)).value().data()[0];
}

autodiff::Var loss_forward(const pipeline::SrModel& model, const std::vector<PatchSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("loss_forward: empty batch");
    autodiff::Var total;
    for (const auto& sample : batch) {
        autodiff::Var input(sample.lr_patch, false);
        auto fields = pipeline::compute_fields(model, input);
        autodiff::Var pred =
            pipeline::predict_queries(model, fields, input, sample.coords, sample.cell);
        autodiff::Var item = autodiff::l1_loss(pred, autodiff::Var(sample.targets, false));
        total = total.defined() ? autodiff::add(total, item) : item;
    }
    return autodiff::scale(total, 1.0 / static_cast<double>(batch.size()));
}

namespace {

double central_difference(pipeline::SrModel& model, const std::vector<PatchSample>& batch,
                          double* slot, double eps) {
    const double saved = *slot;
    autodiff::NoGradGuard ng;
    *slot = saved + eps;
    const double up = loss_forward(model, batch).value().data()[0];
    *slot = saved - eps;
    const double down = loss_forward(model, batch).value().data()[0];
    *slot = saved;
    return (up - down) / (2.0 * eps);
}

} // namespace

double grad_check_subset(pipeline::SrModel& model, const std::vector<PatchSample>& batch,
                         const std::vector<ParamScalarRef>& subset, double eps) {
    model.params.zero_grads();
    autodiff::Var loss = loss_forward(model, batch);
    autodiff::backward(loss);

    double worst = 0.0;
    for (const auto& ref : subset) {
        Param* p = model.params.find(ref.name);
        if (!p) throw std::invalid_argument("grad_check: unknown parameter " + ref.name);
        const double analytic = p->var.has_grad() ? p->var.grad().data()[ref.index] : 0.0;
        double* slot = &p->var.value_mut().data()[ref.index];
        // The L1 objective is piecewise smooth; a residual crossing zero
        // inside the probe window corrupts the difference quotient, so each
        // scalar is scored at the step that agrees best. A wrong analytic
        // gradient fails at every step.
        double best = 1e300;
        for (double step : {eps, eps * 0.1, eps * 0.01}) {
            const double numeric = central_difference(model, batch, slot, step);
            const double rel = std::fabs(analytic - numeric) /
                               std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            best = std::min(best, rel);
        }
        worst = std::max(worst, best);
    }
    return worst;
}

GradCheckReport grad_check(pipeline::SrModel& model, const std::vector<PatchSample>& batch,
                           int samples_per_module, double eps, Rng& rng) {
    // group trainable scalars by module, preserving registration order
    std::vector<std::string> modules;
    for (const auto& p : model.params.all()) {
        if (!p.trainable) continue;
        if (std::find(modules.begin(), modules.end(), p.module) == modules.end())
            modules.push_back(p.module);
    }

    GradCheckReport report;
    for (const auto& module : modules) {
        std::vector<std::pair<std::string, std::size_t>> slots; // name, numel
        std::size_t total = 0;
        for (const auto& p : model.params.all())
            if (p.trainable && p.module == module) {
                slots.emplace_back(p.name, p.var.value().numel());
                total += p.var.value().numel();
            }
        std::vector<ParamScalarRef> subset;
        std::vector<std::size_t> chosen;
        const int want = std::min<std::size_t>(samples_per_module, total);
        while (static_cast<int>(subset.size()) < want) {
            std::size_t flat = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(total)));
            if (std::find(chosen.begin(), chosen.end(), flat) != chosen.end()) continue;
            chosen.push_back(flat);
            for (const auto& [name, numel] : slots) {
                if (flat < numel) {
                    subset.push_back({name, flat});
                    break;
                }
                flat -= numel;
            }
        }
        const double module_err = grad_check_subset(model, batch, subset, eps);
        report.per_module.emplace_back(module, module_err);
        report.max_rel_err = std::max(report.max_rel_err, module_err);
        report.scalars_checked += static_cast<int>(subset.size());
    }
    return report;
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    int t = 0;
};

void adam_step(pipeline::SrModel& model, AdamState& state, double lr) {
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.empty()) {
        state.m.resize(model.params.size());
        state.v.resize(model.params.size());
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, state.t);
    const double bc2 = 1.0 - std::pow(beta2, state.t);
    for (int i = 0; i < model.params.size(); ++i) {
        Param& p = model.params.at(i);
        if (!p.trainable || !p.var.has_grad()) continue;
        const Tensor& g = p.var.grad();
        Tensor& value = p.var.value_mut();
        if (state.m[i].numel() == 0) {
            state.m[i] = Tensor(g.n(), g.c(), g.h(), g.w());
            state.v[i] = Tensor(g.n(), g.c(), g.h(), g.w());
        }
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        double* w = value.data();
        const double* gd = g.data();
        for (std::size_t k = 0; k < value.numel(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * gd[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * gd[k] * gd[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace

std::vector<HistoryRow> train_micro(pipeline::SrModel& model, const std::vector<Tensor>& images,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (images.empty()) throw std::invalid_argument("train_micro: no training images");
    if (cfg.stage != model.stage)
        throw std::invalid_argument("train_micro: config stage does not match the model stage");

    Rng rng(cfg.seed);
    AdamState adam;
    std::vector<HistoryRow> history;
    history.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<PatchSample> batch;
        batch.reserve(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b) {
            const int img = rng.uniform_int(static_cast<int>(images.size()));
            const double eta = rng.uniform(cfg.scale_min, cfg.scale_max);
            batch.push_back(sample_patch_pair(images[img], eta, cfg.patch_lr, rng, cfg.augment));
        }
        model.params.zero_grads();
        autodiff::Var loss = loss_forward(model, batch);
        const double loss_value = loss.value().data()[0];
        if (!std::isfinite(loss_value))
            throw std::runtime_error("train_micro: loss became non-finite at step " +
                                     std::to_string(step));
        autodiff::backward(loss);
        const double lr = lr_at_step(cfg, step);
        adam_step(model, adam, lr);
        history.push_back({step, lr, loss_value});
    }
    return history;
}

void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "step,lr,loss\n";
    char buf[96];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.step, row.lr, row.loss);
        os << buf;
    }
}

CumulativeResult cumulative_schedule(const pipeline::ModelConfig& mcfg, std::uint64_t model_seed,
                                     const std::vector<Tensor>& images, const TrainConfig& cfg1,
                                     const TrainConfig& cfg2) {
    if (cfg1.stage != reparam::StageTag::stage1_plain)
        throw std::invalid_argument("cumulative_schedule: cfg1 must be a stage-1 config");
    if (cfg2.stage != reparam::StageTag::stage2_rim)
        throw std::invalid_argument("cumulative_schedule: cfg2 must be a stage-2 config");

    CumulativeResult result;
    pipeline::SrModel model = pipeline::build_model(mcfg, model_seed);
    result.history1 = train_micro(model, images, cfg1);
    result.stage1 = reparam::clone_model(model);

    reparam::wrap_model_with_rim(model);
    result.history2 = train_micro(model, images, cfg2);
    result.folded = reparam::fold_for_inference(model);
    result.stage2 = std::move(model);
    return result;
}

} // namespace msit::trainer
