#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msit/model.hpp"
#include "msit/rng.hpp"

namespace msit::trainer {

struct TrainConfig {
    double scale_min = 1.0;
    double scale_max = 4.0;
    int patch_lr = 12;
    int steps = 200;
    int warmup_steps = 50;
    double base_lr = 1e-3;
    double min_lr = 1e-5;
    int batch = 1;
    std::uint64_t seed = 0;
    reparam::StageTag stage = reparam::StageTag::stage1_plain;
    bool augment = true;

    void validate() const;
};

// linear warmup to base_lr, then cosine decay to min_lr
double lr_at_step(const TrainConfig& cfg, int step);

struct PatchSample {
    Tensor lr_patch;           // [1,3,p,p]
    std::vector<Coord> coords; // sampled HR coordinates in the crop's frame
    Tensor targets;            // [Q,3] RGB reads of the HR crop
    coords::Cell cell;
    int crop_side = 0;
};

// random HR crop of side round(patch_lr*eta), flip/rotation augmentation,
// bicubic degradation to patch_lr, and patch_lr^2 distinct coordinate-RGB
// samples from the crop
PatchSample sample_patch_pair(const Tensor& hr_image, double eta, int patch_lr, Rng& rng,
                              bool augment = true);

double l1_loss(const Tensor& pred, const Tensor& target);

// batch loss: mean of the per-sample L1 losses
autodiff::Var loss_forward(const pipeline::SrModel& model, const std::vector<PatchSample>& batch);

struct ParamScalarRef {
    std::string name;
    std::size_t index;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<std::pair<std::string, double>> per_module; // module -> max rel err
    int scalars_checked = 0;
};

// central-difference verification of the analytic gradients
double grad_check_subset(pipeline::SrModel& model, const std::vector<PatchSample>& batch,
                         const std::vector<ParamScalarRef>& subset, double eps = 1e-4);
GradCheckReport grad_check(pipeline::SrModel& model, const std::vector<PatchSample>& batch,
                           int samples_per_module, double eps, Rng& rng);

struct HistoryRow {
    int step;
    double lr;
    double loss;
};

std::vector<HistoryRow> train_micro(pipeline::SrModel& model, const std::vector<Tensor>& images,
                                    const TrainConfig& cfg);

void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path);

struct CumulativeResult {
    pipeline::SrModel stage1;
    pipeline::SrModel stage2;
    pipeline::SrModel folded;
    std::vector<HistoryRow> history1;
    std::vector<HistoryRow> history2;
};

// stage-1 training, RIM wrap, stage-2 training, fold
CumulativeResult cumulative_schedule(const pipeline::ModelConfig& mcfg, std::uint64_t model_seed,
                                     const std::vector<Tensor>& images, const TrainConfig& cfg1,
                                     const TrainConfig& cfg2);

} // namespace msit::trainer
