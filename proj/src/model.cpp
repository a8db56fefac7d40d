#include "msit/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace msit::pipeline {

double ModelConfig::resolved_logit_scale() const {
    if (logit_scale > 0.0) return logit_scale;
    return std::sqrt(static_cast<double>(channels) / heads);
}

void ModelConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
    if (use_fem && channels % 8 != 0)
        throw std::invalid_argument("config: channels must be divisible by 8 when FEM is on");
    if (msc_branches < 1 || channels % msc_branches != 0)
        throw std::invalid_argument("config: msc_branches must divide channels");
    if (heads < 1 || channels % heads != 0)
        throw std::invalid_argument("config: heads must divide channels");
    if (proj_branches < 1) throw std::invalid_argument("config: proj_branches must be >= 1");
    if (fourier_freqs < 1) throw std::invalid_argument("config: fourier_freqs must be >= 1");
    if (neighborhood < 1 || neighborhood % 2 == 0)
        throw std::invalid_argument("config: neighborhood must be odd and >= 1");
    if (logit_scale < 0.0) throw std::invalid_argument("config: logit_scale must be >= 0");
    if (decoder_hidden < 1 || decoder_depth < 1)
        throw std::invalid_argument("config: decoder must have at least one hidden layer");
    if (encoder_blocks < 0) throw std::invalid_argument("config: encoder_blocks must be >= 0");
    if (fem_stride < 0) throw std::invalid_argument("config: fem_stride must be >= 0");
    if (chunk_size < 1) throw std::invalid_argument("config: chunk_size must be >= 1");
}

SrModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SrModel m;
    m.cfg = cfg;
    m.seed = seed;
    Rng rng(seed);
    const int C = cfg.channels;

    // encoder
    m.stem_w = Var(kaiming_conv(C, 3, 3, rng), true);
    m.stem_b = Var(Tensor::matrix(1, C), true);
    m.params.adopt("encoder.stem.weight", "encoder", m.stem_w);
    m.params.adopt("encoder.stem.bias", "encoder", m.stem_b);
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        std::array<Var, 4> blk{Var(kaiming_conv(C, C, 3, rng), true),
                               Var(Tensor::matrix(1, C), true),
                               Var(kaiming_conv(C, C, 3, rng), true),
                               Var(Tensor::matrix(1, C), true)};
        const std::string base = "encoder.block" + std::to_string(i);
        m.params.adopt(base + ".conv1.weight", "encoder", blk[0]);
        m.params.adopt(base + ".conv1.bias", "encoder", blk[1]);
        m.params.adopt(base + ".conv2.weight", "encoder", blk[2]);
        m.params.adopt(base + ".conv2.bias", "encoder", blk[3]);
        m.blocks.push_back(blk);
    }
    m.tail_w = Var(kaiming_conv(C, C, 3, rng), true);
    m.tail_b = Var(Tensor::matrix(1, C), true);
    m.params.adopt("encoder.tail.weight", "encoder", m.tail_w);
    m.params.adopt("encoder.tail.bias", "encoder", m.tail_b);

    // msno
    m.msno.use_fem = cfg.use_fem;
    m.msno.use_sim = cfg.use_sim;
    if (cfg.use_fem) {
        std::array<int, 8> strides;
        strides.fill(cfg.fem_stride);
        m.msno.fem = msno::make_fem_params(strides);
        m.params.adopt("msno.fem.kernels", "msno", m.msno.fem.kernels);
    }
    m.msno.msc = msno::make_msc_params(cfg.msc_branches, C, rng);
    for (int i = 0; i < cfg.msc_branches; ++i) {
        const std::string base = "msno.msc.branch" + std::to_string(i);
        m.params.adopt(base + ".weight", "msno", m.msno.msc.kernels[i]);
        m.params.adopt(base + ".bias", "msno", m.msno.msc.biases[i]);
    }
    if (cfg.use_sim) {
        m.msno.sim = msno::make_sim_params(cfg.msc_branches, C, rng);
        for (int i = 0; i < cfg.msc_branches; ++i) {
            const std::string base = "msno.sim.scale" + std::to_string(i);
            m.params.adopt(base + ".weight", "msno", m.msno.sim.scale_mix_w[i]);
            m.params.adopt(base + ".bias", "msno", m.msno.sim.scale_mix_b[i]);
        }
        m.params.adopt("msno.sim.cross.weight", "msno", m.msno.sim.cross_mix_w);
        m.params.adopt("msno.sim.cross.bias", "msno", m.msno.sim.cross_mix_b);
        m.params.adopt("msno.sim.modulation.weight", "msno", m.msno.sim.modulation_w);
        m.params.adopt("msno.sim.modulation.bias", "msno", m.msno.sim.modulation_b);
    } else {
        m.msno.merge_w = Var(kaiming_conv(C, C, 1, rng), true);
        m.msno.merge_b = Var(Tensor::matrix(1, C), true);
        m.params.adopt("msno.merge.weight", "msno", m.msno.merge_w);
        m.params.adopt("msno.merge.bias", "msno", m.msno.merge_b);
    }

    // mssa
    m.mssa = mssa::make_mssa_params(cfg.proj_branches, C, cfg.heads, cfg.resolved_logit_scale(),
                                    rng);
    for (int i = 0; i < cfg.proj_branches; ++i) {
        const std::string base = "mssa.proj_q.branch" + std::to_string(i);
        m.params.adopt(base + ".weight", "mssa", m.mssa.q_kernels[i]);
        m.params.adopt(base + ".bias", "mssa", m.mssa.q_biases[i]);
    }
    m.params.adopt("mssa.fuse_q.weight", "mssa", m.mssa.fuse_q_w);
    m.params.adopt("mssa.fuse_q.bias", "mssa", m.mssa.fuse_q_b);
    for (int i = 0; i < cfg.proj_branches; ++i) {
        const std::string base = "mssa.proj_v.branch" + std::to_string(i);
        m.params.adopt(base + ".weight", "mssa", m.mssa.v_kernels[i]);
        m.params.adopt(base + ".bias", "mssa", m.mssa.v_biases[i]);
    }
    m.params.adopt("mssa.fuse_v.weight", "mssa", m.mssa.fuse_v_w);
    m.params.adopt("mssa.fuse_v.bias", "mssa", m.mssa.fuse_v_b);

    // fourier encoder
    const int keys = cfg.neighborhood * cfg.neighborhood;
    coords::FourierEncoder enc = coords::make_fourier_encoder(cfg.fourier_freqs, keys, rng);
    m.fourier.frequencies = Var(enc.frequencies, true);
    m.fourier.mix_weights = Var(enc.mix_weights, true);
    m.fourier.mix_bias = Var(enc.mix_bias, true);
    m.params.adopt("fourier.frequencies", "fourier", m.fourier.frequencies);
    m.params.adopt("fourier.mix.weight", "fourier", m.fourier.mix_weights);
    m.params.adopt("fourier.mix.bias", "fourier", m.fourier.mix_bias);

    // decoder
    int in_dim = C + (cfg.include_cell ? 2 : 0);
    for (int i = 0; i < cfg.decoder_depth; ++i) {
        Var w(kaiming_matrix(in_dim, cfg.decoder_hidden, rng), true);
        Var b(Tensor::matrix(1, cfg.decoder_hidden), true);
        const std::string base = "decoder.layer" + std::to_string(i);
        m.params.adopt(base + ".weight", "decoder", w);
        m.params.adopt(base + ".bias", "decoder", b);
        m.decoder.emplace_back(w, b);
        in_dim = cfg.decoder_hidden;
    }
    Var ow(kaiming_matrix(in_dim, 3, rng), true);
    Var ob(Tensor::matrix(1, 3), true);
    m.params.adopt("decoder.out.weight", "decoder", ow);
    m.params.adopt("decoder.out.bias", "decoder", ob);
    m.decoder.emplace_back(ow, ob);

    return m;
}

std::vector<EligibleConv> eligible_convs(const ModelConfig& cfg) {
    std::vector<EligibleConv> out;
    out.push_back({"encoder.stem.weight", 3});
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        const std::string base = "encoder.block" + std::to_string(i);
        out.push_back({base + ".conv1.weight", 3});
        out.push_back({base + ".conv2.weight", 3});
    }
    out.push_back({"encoder.tail.weight", 3});
    for (int i = 0; i < cfg.msc_branches; ++i)
        out.push_back({"msno.msc.branch" + std::to_string(i) + ".weight", 2 * (i + 1) + 1});
    for (int i = 1; i < cfg.proj_branches; ++i) { // branch 0 is 1x1
        out.push_back({"mssa.proj_q.branch" + std::to_string(i) + ".weight", 2 * i + 1});
        out.push_back({"mssa.proj_v.branch" + std::to_string(i) + ".weight", 2 * i + 1});
    }
    return out;
}

namespace {

// stage-2 forwards convolve with the remapped kernel
Var eff(const SrModel& m, const std::string& name, const Var& w) {
    if (m.stage != reparam::StageTag::stage2_rim) return w;
    for (const auto& slot : m.rim_slots)
        if (slot.name == name) return reparam::rim_remap(slot.weight, slot.rim);
    return w;
}

msno::MsnoParams eff_msno(const SrModel& m) {
    msno::MsnoParams p = m.msno;
    if (m.stage == reparam::StageTag::stage2_rim)
        for (int i = 0; i < p.msc.branches; ++i)
            p.msc.kernels[i] =
                eff(m, "msno.msc.branch" + std::to_string(i) + ".weight", p.msc.kernels[i]);
    return p;
}

mssa::MssaParams eff_mssa(const SrModel& m) {
    mssa::MssaParams p = m.mssa;
    if (m.stage == reparam::StageTag::stage2_rim)
        for (int i = 1; i < p.n_proj; ++i) {
            p.q_kernels[i] =
                eff(m, "mssa.proj_q.branch" + std::to_string(i) + ".weight", p.q_kernels[i]);
            p.v_kernels[i] =
                eff(m, "mssa.proj_v.branch" + std::to_string(i) + ".weight", p.v_kernels[i]);
        }
    return p;
}

} // namespace

Var encoder_forward(const SrModel& model, const Var& img) {
    const auto& v = img.value();
    if (v.c() != 3) throw std::invalid_argument("encoder: expected a 3-channel image");
    if (v.h() < 8 || v.w() < 8)
        throw std::invalid_argument("encoder: input must be at least 8x8");
    Var x = autodiff::conv2d(img, eff(model, "encoder.stem.weight", model.stem_w), model.stem_b,
                             PadMode::zero);
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        const std::string base = "encoder.block" + std::to_string(i);
        const auto& blk = model.blocks[i];
        Var h = autodiff::conv2d(x, eff(model, base + ".conv1.weight", blk[0]), blk[1],
                                 PadMode::zero);
        h = autodiff::gelu(h);
        h = autodiff::conv2d(h, eff(model, base + ".conv2.weight", blk[2]), blk[3], PadMode::zero);
        x = autodiff::add(x, h);
    }
    return autodiff::conv2d(x, eff(model, "encoder.tail.weight", model.tail_w), model.tail_b,
                            PadMode::zero);
}

Var decoder_forward(const SrModel& model, const Var& attn_latent, coords::Cell cell, int lr_h,
                    int lr_w) {
    Var x = attn_latent;
    if (model.cfg.include_cell) {
        const int Q = x.value().rows();
        Tensor cols = Tensor::matrix(Q, 2);
        for (int q = 0; q < Q; ++q) {
            cols.mat(q, 0) = cell.cell_h * lr_h;
            cols.mat(q, 1) = cell.cell_w * lr_w;
        }
        x = autodiff::concat_cols(x, Var(cols, false));
    }
    for (int i = 0; i < model.cfg.decoder_depth; ++i) {
        x = autodiff::add_row_bias(autodiff::matmul(x, model.decoder[i].first),
                                   model.decoder[i].second);
        x = autodiff::gelu(x);
    }
    const auto& out_layer = model.decoder.back();
    return autodiff::add_row_bias(autodiff::matmul(x, out_layer.first), out_layer.second);
}

FieldCache compute_fields(const SrModel& model, const Var& img) {
    FieldCache cache;
    Var latent = encoder_forward(model, img);
    cache.ms_latent = msno::msno_forward(latent, eff_msno(model));
    mssa::MssaParams mp = eff_mssa(model);
    cache.q_field = mssa::multiscale_project(cache.ms_latent, mp.q_kernels, mp.q_biases,
                                             mp.fuse_q_w, mp.fuse_q_b);
    cache.v_field = mssa::multiscale_project(cache.ms_latent, mp.v_kernels, mp.v_biases,
                                             mp.fuse_v_w, mp.fuse_v_b);
    return cache;
}

Var decode_queries(const SrModel& model, const FieldCache& fields,
                   const std::vector<Coord>& queries, coords::Cell cell, int lr_h, int lr_w) {
    const auto lr_grid = coords::make_coord_grid(lr_h, lr_w);
    const auto query = mssa::build_attention_query(queries, lr_grid, model.cfg.neighborhood);
    auto qkv = mssa::build_qkv(fields.q_field, fields.v_field, query);
    Var pos = coords::fourier_encode(model.fourier, query.rel_coords,
                                     static_cast<int>(queries.size()), query.keys);
    Var attn = mssa::attention_forward(qkv.qhat, qkv.khat, qkv.vhat, pos, model.cfg.heads,
                                       model.cfg.resolved_logit_scale());
    return decoder_forward(model, attn, cell, lr_h, lr_w);
}

Var predict_queries(const SrModel& model, const FieldCache& fields, const Var& img,
                    const std::vector<Coord>& queries, coords::Cell cell) {
    Var residual = decode_queries(model, fields, queries, cell, img.value().h(), img.value().w());
    Var skip = autodiff::grid_sample_bilinear(img, queries);
    return autodiff::add(residual, skip);
}

SrOutput assr_forward_parts(const SrModel& model, const Tensor& img, double scale_h,
                            double scale_w) {
    if (scale_h <= 0.0 || scale_w <= 0.0)
        throw std::invalid_argument("assr_forward: scale must be positive");
    autodiff::NoGradGuard ng;
    const int OH = ops::scaled_extent(scale_h, img.h());
    const int OW = ops::scaled_extent(scale_w, img.w());
    const auto grid = coords::make_coord_grid(OH, OW);
    const coords::Cell cell = coords::make_cell(OH, OW);

    Var input(img, false);
    FieldCache fields = compute_fields(model, input);

    Tensor residual(1, 3, OH, OW);
    const int total = OH * OW;
    for (int start = 0; start < total; start += model.cfg.chunk_size) {
        const int end = std::min(total, start + model.cfg.chunk_size);
        std::vector<Coord> chunk(grid.coords.begin() + start, grid.coords.begin() + end);
        Tensor rows = decode_queries(model, fields, chunk, cell, img.h(), img.w()).value();
        for (int i = 0; i < end - start; ++i) {
            const int y = (start + i) / OW, x = (start + i) % OW;
            for (int c = 0; c < 3; ++c) residual.at(0, c, y, x) = rows.mat(i, c);
        }
    }

    SrOutput out;
    out.skip = ops::bilinear_resize(img, scale_h, scale_w);
    out.residual = residual;
    out.output = residual + out.skip;
    return out;
}

Tensor assr_forward(const SrModel& model, const Tensor& img, double scale_h, double scale_w) {
    return assr_forward_parts(model, img, scale_h, scale_w).output;
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    const double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = p[i] - q[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

Tensor error_map(const Tensor& pred, const Tensor& truth) {
    if (!pred.same_shape(truth)) throw std::invalid_argument("error_map: shape mismatch");
    const int C = pred.c(), H = pred.h(), W = pred.w();
    Tensor map(1, 1, H, W);
    double mx = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c) acc += std::fabs(pred.at(0, c, y, x) - truth.at(0, c, y, x));
            acc /= C;
            map.at(0, 0, y, x) = acc;
            mx = std::max(mx, acc);
        }
    if (mx > 0.0)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) map.at(0, 0, y, x) /= mx;
    return map;
}

} // namespace msit::pipeline
