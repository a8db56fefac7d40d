#include "msit/coords.hpp"

#include <cmath>
#include <stdexcept>

namespace msit::coords {

CoordGrid make_coord_grid(int h, int w) {
    if (h < 1 || w < 1)
        throw std::invalid_argument("make_coord_grid: extents must be >= 1");
    CoordGrid g;
    g.height = h;
    g.width = w;
    g.coords.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            g.coords.push_back({coordmap::cell_center(y, h), coordmap::cell_center(x, w)});
    return g;
}

Cell make_cell(int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("make_cell: extents must be >= 1");
    return {2.0 / out_h, 2.0 / out_w};
}

NearestResult nearest_lr_coords(const std::vector<Coord>& hr_queries, const CoordGrid& lr_grid) {
    if (hr_queries.empty() || lr_grid.coords.empty())
        throw std::invalid_argument("nearest_lr_coords: empty grid");
    NearestResult res;
    res.anchor_coords.resize(hr_queries.size());
    res.anchor_indices.resize(hr_queries.size());
    const int H = lr_grid.height, W = lr_grid.width;
    for (std::size_t q = 0; q < hr_queries.size(); ++q) {
        // the grid is separable, so the nearest point factors per axis
        const int iy = coordmap::nearest_index(hr_queries[q].y, H);
        const int ix = coordmap::nearest_index(hr_queries[q].x, W);
        const int flat = iy * W + ix;
        res.anchor_indices[q] = flat;
        res.anchor_coords[q] = lr_grid.coords[flat];
    }
    return res;
}

std::vector<int> local_neighborhood(int anchor_index, const CoordGrid& lr_grid, int r) {
    if (r < 1 || r % 2 == 0)
        throw std::invalid_argument("local_neighborhood: r must be odd and >= 1");
    const int H = lr_grid.height, W = lr_grid.width;
    const int ay = anchor_index / W, ax = anchor_index % W;
    const int half = (r - 1) / 2;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(r) * r);
    for (int dy = -half; dy <= half; ++dy) {
        int y = ay + dy;
        y = y < 0 ? 0 : (y > H - 1 ? H - 1 : y);
        for (int dx = -half; dx <= half; ++dx) {
            int x = ax + dx;
            x = x < 0 ? 0 : (x > W - 1 ? W - 1 : x);
            out.push_back(y * W + x);
        }
    }
    return out;
}

FourierEncoder make_fourier_encoder(int num_freqs, int keys, Rng& rng) {
    if (num_freqs < 1) throw std::invalid_argument("make_fourier_encoder: num_freqs must be >= 1");
    FourierEncoder enc;
    enc.num_freqs = num_freqs;
    enc.frequencies = Tensor(1, 1, num_freqs, 2);
    for (int j = 0; j < num_freqs; ++j)
        for (int k = 0; k < 2; ++k) enc.frequencies.at(0, 0, j, k) = rng.normal();
    const int F = 4 * num_freqs;
    enc.mix_weights = Tensor(1, 1, F, keys);
    const double bound = std::sqrt(6.0 / F);
    for (int f = 0; f < F; ++f)
        for (int j = 0; j < keys; ++j) enc.mix_weights.at(0, 0, f, j) = rng.uniform(-bound, bound);
    enc.mix_bias = Tensor(1, 1, 1, keys);
    return enc;
}

autodiff::Var fourier_encode(const FourierVars& enc, const Tensor& delta, int queries, int keys) {
    autodiff::Var feat = autodiff::fourier_features(delta, enc.frequencies);
    return autodiff::fourier_mix(feat, enc.mix_weights, enc.mix_bias, queries, keys);
}

Tensor fourier_encode(const FourierEncoder& enc, const Tensor& delta, int queries) {
    autodiff::NoGradGuard ng;
    FourierVars vars{autodiff::Var(enc.frequencies), autodiff::Var(enc.mix_weights),
                     autodiff::Var(enc.mix_bias)};
    const int keys = enc.mix_bias.cols();
    return fourier_encode(vars, delta, queries, keys).value();
}

Tensor fourier_features_prelinear(const FourierEncoder& enc, const Tensor& delta) {
    autodiff::NoGradGuard ng;
    return autodiff::fourier_features(delta, autodiff::Var(enc.frequencies)).value();
}

} // namespace msit::coords
