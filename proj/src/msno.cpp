#include "msit/msno.hpp"

#include "msit/params.hpp"

#include <stdexcept>

namespace msit::msno {

const std::array<std::array<int, 2>, 8> fem_directions = {{
    {-1, 0},  // up
    {-1, -1}, // up-left
    {-1, 1},  // up-right
    {1, 0},   // down
    {1, -1},  // down-left
    {1, 1},   // down-right
    {0, -1},  // left
    {0, 1},   // right
}};

namespace {
inline int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}
} // namespace

Tensor make_fem_kernels(const std::array<int, 8>& strides) {
    int max_stride = 0;
    for (int s : strides) {
        if (s < 0) throw std::invalid_argument("fem: stride must be >= 0");
        max_stride = std::max(max_stride, s);
    }
    const int k = 2 * max_stride + 1;
    const int p = (k - 1) / 2;
    Tensor kernels(8, 1, k, k);
    for (int g = 0; g < 8; ++g) {
        const int dy = fem_directions[g][0] * strides[g];
        const int dx = fem_directions[g][1] * strides[g];
        kernels.at(g, 0, p - dy, p - dx) = 1.0;
    }
    return kernels;
}

FemParams make_fem_params(const std::array<int, 8>& strides) {
    FemParams params;
    params.strides = strides;
    Tensor k = make_fem_kernels(strides);
    params.kernel_size = k.h();
    params.kernels = Var(k, true);
    return params;
}

Tensor fem_shift_direct(const Tensor& z, const std::array<int, 8>& strides) {
    if (z.c() % 8 != 0)
        throw std::invalid_argument("fem: channel count must be divisible by 8");
    const int N = z.n(), C = z.c(), H = z.h(), W = z.w();
    const int per = C / 8;
    Tensor out(N, C, H, W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int g = c / per;
            const int dy = fem_directions[g][0] * strides[g];
            const int dx = fem_directions[g][1] * strides[g];
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    out.at(n, c, y, x) = z.at(n, c, wrap(y - dy, H), wrap(x - dx, W));
        }
    return out;
}

Var fem_shift_conv(const Var& z, const FemParams& params) {
    if (z.value().c() % 8 != 0)
        throw std::invalid_argument("fem: channel count must be divisible by 8");
    Var expanded = autodiff::expand_group_kernels(params.kernels, z.value().c());
    return autodiff::depthwise_conv2d(z, expanded, PadMode::circular);
}

MscParams make_msc_params(int t, int channels, Rng& rng) {
    if (t < 1 || channels % t != 0)
        throw std::invalid_argument("msc: branch count must divide channels");
    MscParams params;
    params.branches = t;
    const int cg = channels / t;
    for (int i = 1; i <= t; ++i) {
        const int k = 2 * i + 1;
        params.kernels.emplace_back(kaiming_conv(cg, cg, k, rng), true);
        params.biases.emplace_back(Tensor::matrix(1, cg), true);
    }
    return params;
}

std::vector<Var> msc_apply(const Var& z, const MscParams& params) {
    const int C = z.value().c();
    const int t = params.branches;
    if (C % t != 0)
        throw std::invalid_argument("msc_apply: channels not divisible by branch count");
    const int cg = C / t;
    std::vector<Var> out;
    out.reserve(t);
    for (int i = 0; i < t; ++i) {
        Var group = autodiff::slice_channels(z, i * cg, (i + 1) * cg);
        out.push_back(autodiff::conv2d(group, params.kernels[i], params.biases[i], PadMode::zero));
    }
    return out;
}

SimParams make_sim_params(int t, int channels, Rng& rng) {
    if (channels % t != 0) throw std::invalid_argument("sim: branch count must divide channels");
    SimParams params;
    const int cg = channels / t;
    for (int i = 0; i < t; ++i) {
        params.scale_mix_w.emplace_back(kaiming_conv(cg, cg, 1, rng), true);
        params.scale_mix_b.emplace_back(Tensor::matrix(1, cg), true);
    }
    params.cross_mix_w = Var(kaiming_conv(channels, channels, 1, rng), true);
    params.cross_mix_b = Var(Tensor::matrix(1, channels), true);
    params.modulation_w = Var(kaiming_conv(channels, channels, 1, rng), true);
    params.modulation_b = Var(Tensor::matrix(1, channels), true);
    return params;
}

Var sim_merge(const std::vector<Var>& groups, const SimParams& params,
              const Var& modulation_source) {
    if (groups.size() != params.scale_mix_w.size())
        throw std::invalid_argument("sim_merge: group count does not match parameters");
    std::vector<Var> mixed;
    mixed.reserve(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        Var m = autodiff::conv2d(groups[i], params.scale_mix_w[i], params.scale_mix_b[i],
                                 PadMode::zero);
        mixed.push_back(params.identity_activation ? m : autodiff::gelu(m));
    }
    Var crossed = autodiff::conv2d(autodiff::concat_channels(mixed), params.cross_mix_w,
                                   params.cross_mix_b, PadMode::zero);
    Var modulation = autodiff::conv2d(modulation_source, params.modulation_w, params.modulation_b,
                                      PadMode::zero);
    return autodiff::hadamard(crossed, modulation);
}

Var msno_forward(const Var& z, const MsnoParams& params) {
    Var enriched = params.use_fem ? fem_shift_conv(z, params.fem) : z;
    std::vector<Var> groups = msc_apply(enriched, params.msc);
    Var stacked = autodiff::concat_channels(groups);
    if (params.use_sim) return sim_merge(groups, params.sim, stacked);
    return autodiff::conv2d(stacked, params.merge_w, params.merge_b, PadMode::zero);
}

} // namespace msit::msno
