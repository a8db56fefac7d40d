#pragma once

#include <vector>

#include "msit/autodiff.hpp"
#include "msit/ops.hpp"
#include "msit/rng.hpp"
#include "msit/tensor.hpp"

namespace msit::coords {

// Cell-center lattice over [-1,1]^2, row-major.
struct CoordGrid {
    int height = 0;
    int width = 0;
    std::vector<Coord> coords;
};

// normalized size of one query pixel: (2/out_h, 2/out_w)
struct Cell {
    double cell_h = 2.0;
    double cell_w = 2.0;
};

CoordGrid make_coord_grid(int h, int w);
Cell make_cell(int out_h, int out_w);

struct NearestResult {
    std::vector<Coord> anchor_coords;
    std::vector<int> anchor_indices; // flat, row-major into the LR grid
};

// nearest LR lattice point per query; equidistant cases resolve toward the
// smaller index (top-left)
NearestResult nearest_lr_coords(const std::vector<Coord>& hr_queries, const CoordGrid& lr_grid);

// r x r window of flat LR indices centered at the anchor, border-clamped,
// row-major
std::vector<int> local_neighborhood(int anchor_index, const CoordGrid& lr_grid, int r);

// Fourier relative-position encoder. Features per offset row are
// [sin(2*pi*w_j*d), cos(2*pi*w_j*d)] over both components (4g values); the mix
// assigns each neighborhood slot its own column, so the result lands directly
// on the [Q, r^2] attention-logit matrix.
struct FourierEncoder {
    int num_freqs = 0;
    Tensor frequencies; // [1,1,g,2]
    Tensor mix_weights; // [1,1,4g,r^2]
    Tensor mix_bias;    // [1,1,1,r^2]
};

// Var-level twin used inside the trainable model
struct FourierVars {
    autodiff::Var frequencies;
    autodiff::Var mix_weights;
    autodiff::Var mix_bias;
};

FourierEncoder make_fourier_encoder(int num_freqs, int keys, Rng& rng);

// delta: [Q*keys, 2] offset rows -> [Q, keys] positional logits
Tensor fourier_encode(const FourierEncoder& enc, const Tensor& delta, int queries);
autodiff::Var fourier_encode(const FourierVars& enc, const Tensor& delta, int queries, int keys);

// pre-linear feature matrix [R, 4g], exposed for the parity/periodicity checks
Tensor fourier_features_prelinear(const FourierEncoder& enc, const Tensor& delta);

} // namespace msit::coords
