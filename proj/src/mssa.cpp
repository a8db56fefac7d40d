#include "msit/mssa.hpp"

#include "msit/params.hpp"

#include <stdexcept>

namespace msit::mssa {

MssaParams make_mssa_params(int n_proj, int channels, int heads, double logit_scale, Rng& rng) {
    if (n_proj < 1) throw std::invalid_argument("mssa: n_proj must be >= 1");
    if (heads < 1 || channels % heads != 0)
        throw std::invalid_argument("mssa: head count must divide channels");
    if (logit_scale <= 0.0) throw std::invalid_argument("mssa: logit scale must be positive");
    MssaParams p;
    p.n_proj = n_proj;
    p.heads = heads;
    p.logit_scale = logit_scale;
    for (int i = 1; i <= n_proj; ++i) {
        const int k = 2 * i - 1;
        p.q_kernels.emplace_back(kaiming_conv(channels, channels, k, rng), true);
        p.q_biases.emplace_back(Tensor::matrix(1, channels), true);
        p.v_kernels.emplace_back(kaiming_conv(channels, channels, k, rng), true);
        p.v_biases.emplace_back(Tensor::matrix(1, channels), true);
    }
    p.fuse_q_w = Var(kaiming_conv(channels, n_proj * channels, 1, rng), true);
    p.fuse_q_b = Var(Tensor::matrix(1, channels), true);
    p.fuse_v_w = Var(kaiming_conv(channels, n_proj * channels, 1, rng), true);
    p.fuse_v_b = Var(Tensor::matrix(1, channels), true);
    return p;
}

Var multiscale_project(const Var& z, const std::vector<Var>& kernels,
                       const std::vector<Var>& biases, const Var& fuse_w, const Var& fuse_b) {
    std::vector<Var> branches;
    branches.reserve(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i)
        branches.push_back(autodiff::conv2d(z, kernels[i], biases[i], PadMode::zero));
    return autodiff::conv2d(autodiff::concat_channels(branches), fuse_w, fuse_b, PadMode::zero);
}

AttentionQuery build_attention_query(const std::vector<Coord>& hr_queries,
                                     const coords::CoordGrid& lr_grid, int r) {
    AttentionQuery q;
    q.hr_coords = hr_queries;
    q.keys = r * r;
    const auto nearest = coords::nearest_lr_coords(hr_queries, lr_grid);
    q.anchor_indices = nearest.anchor_indices;
    const int Q = static_cast<int>(hr_queries.size());
    q.neighbor_indices.reserve(static_cast<std::size_t>(Q) * q.keys);
    q.rel_coords = Tensor::matrix(Q * q.keys, 2);
    for (int i = 0; i < Q; ++i) {
        const auto window = coords::local_neighborhood(q.anchor_indices[i], lr_grid, r);
        for (int j = 0; j < q.keys; ++j) {
            q.neighbor_indices.push_back(window[j]);
            const Coord lr = lr_grid.coords[window[j]];
            q.rel_coords.mat(i * q.keys + j, 0) = hr_queries[i].y - lr.y;
            q.rel_coords.mat(i * q.keys + j, 1) = hr_queries[i].x - lr.x;
        }
    }
    return q;
}

Qkv build_qkv(const Var& q_field, const Var& v_field, const AttentionQuery& query) {
    Qkv out;
    out.qhat = autodiff::grid_sample_bilinear(q_field, query.hr_coords);
    out.khat = autodiff::gather_pixels(q_field, query.neighbor_indices);
    out.vhat = autodiff::gather_pixels(v_field, query.neighbor_indices);
    return out;
}

Var attention_forward(const Var& qhat, const Var& khat, const Var& vhat, const Var& pos_logits,
                      int heads, double logit_scale) {
    Var scores = autodiff::attn_scores(qhat, khat, heads, logit_scale);
    Var logits = autodiff::add_head_bias(scores, pos_logits, heads);
    Var weights = autodiff::softmax_lastdim(logits);
    return autodiff::attn_apply(weights, vhat, heads);
}

Var mssa_forward(const Var& z_ms, const std::vector<Coord>& hr_queries,
                 const coords::CoordGrid& lr_grid, const coords::FourierVars& enc, int r,
                 const MssaParams& params) {
    const AttentionQuery query = build_attention_query(hr_queries, lr_grid, r);
    Var q_field = multiscale_project(z_ms, params.q_kernels, params.q_biases, params.fuse_q_w,
                                     params.fuse_q_b);
    Var v_field = multiscale_project(z_ms, params.v_kernels, params.v_biases, params.fuse_v_w,
                                     params.fuse_v_b);
    Qkv qkv = build_qkv(q_field, v_field, query);
    Var pos = coords::fourier_encode(enc, query.rel_coords,
                                     static_cast<int>(hr_queries.size()), query.keys);
    return attention_forward(qkv.qhat, qkv.khat, qkv.vhat, pos, params.heads, params.logit_scale);
}

} // namespace msit::mssa
