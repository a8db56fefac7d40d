#include "msit/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace msit {
namespace coordmap {

double continuous_index(double coord, int n) {
    double p = (coord + 1.0) * 0.5 * n - 0.5;
    double r = std::nearbyint(p);
    if (std::fabs(p - r) < 1e-9) p = r; // lattice hits must be exact
    if (p < 0.0) p = 0.0;
    double hi = static_cast<double>(n - 1);
    if (p > hi) p = hi;
    return p;
}

int nearest_index(double coord, int n) {
    double p = continuous_index(coord, n);
    int i = static_cast<int>(std::ceil(p - 0.5));
    if (i < 0) i = 0;
    if (i > n - 1) i = n - 1;
    return i;
}

} // namespace coordmap

namespace ops {

namespace {

inline int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}

void check_conv_args(const Tensor& input, const Tensor& kernel, int cin_per_group) {
    if (kernel.h() != kernel.w())
        throw std::invalid_argument("conv2d: kernel must be square");
    if (kernel.h() % 2 == 0)
        throw std::invalid_argument("conv2d: kernel size must be odd, got " +
                                    std::to_string(kernel.h()));
    if (kernel.c() != cin_per_group)
        throw std::invalid_argument("conv2d: kernel input channels " + std::to_string(kernel.c()) +
                                    " do not match input channels " + std::to_string(cin_per_group));
}

struct AxisTaps {
    int i0, i1;
    double f;
};

inline AxisTaps bilinear_taps(double coord, int n) {
    double p = coordmap::continuous_index(coord, n);
    AxisTaps t;
    t.i0 = static_cast<int>(std::floor(p));
    if (t.i0 > n - 1) t.i0 = n - 1;
    t.i1 = t.i0 + 1 > n - 1 ? n - 1 : t.i0 + 1;
    t.f = p - t.i0;
    return t;
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Catmull-Rom taps at offsets -1..2. The accumulation below runs in
// deviation-from-center-tap form, which keeps constant images exactly
// constant and scale 1 exactly the identity.
struct CubicTaps {
    int base; // index of the offset-0 tap before clamping
    double w[4];
};

inline double cubic_kernel(double s) {
    const double a = -0.5;
    s = std::fabs(s);
    if (s < 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
    if (s < 2.0) return (((s - 5.0) * s + 8.0) * s - 4.0) * a;
    return 0.0;
}

inline CubicTaps cubic_taps(double p) {
    CubicTaps t;
    double fl = std::floor(p);
    t.base = static_cast<int>(fl);
    double f = p - fl;
    t.w[0] = cubic_kernel(1.0 + f);
    t.w[2] = cubic_kernel(1.0 - f);
    t.w[3] = cubic_kernel(2.0 - f);
    t.w[1] = 1.0 - t.w[0] - t.w[2] - t.w[3];
    return t;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i > n - 1 ? n - 1 : i); }

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, PadMode pad) {
    check_conv_args(input, kernel, input.c());
    const int N = input.n(), Cin = input.c(), H = input.h(), W = input.w();
    const int Cout = kernel.n(), K = kernel.h(), P = (K - 1) / 2;
    if (bias && (bias->rows() != 1 || bias->cols() != Cout))
        throw std::invalid_argument("conv2d: bias length does not match output channels");

    Tensor out(N, Cout, H, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            const double b = bias ? bias->mat(0, co) : 0.0;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int u = 0; u < K; ++u) {
                            int iy = y + u - P;
                            if (pad == PadMode::circular) iy = wrap(iy, H);
                            else if (iy < 0 || iy >= H) continue;
                            for (int v = 0; v < K; ++v) {
                                int ix = x + v - P;
                                if (pad == PadMode::circular) ix = wrap(ix, W);
                                else if (ix < 0 || ix >= W) continue;
                                acc += input.at(n, ci, iy, ix) * kernel.at(co, ci, u, v);
                            }
                        }
                    }
                    out.at(n, co, y, x) = acc + b;
                }
            }
        }
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, PadMode pad) {
    if (kernel.n() != input.c())
        throw std::invalid_argument("depthwise_conv2d: kernel channel count " +
                                    std::to_string(kernel.n()) + " does not match input channels " +
                                    std::to_string(input.c()));
    check_conv_args(input, kernel, 1);
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    const int K = kernel.h(), P = (K - 1) / 2;

    Tensor out(N, C, H, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int u = 0; u < K; ++u) {
                        int iy = y + u - P;
                        if (pad == PadMode::circular) iy = wrap(iy, H);
                        else if (iy < 0 || iy >= H) continue;
                        for (int v = 0; v < K; ++v) {
                            int ix = x + v - P;
                            if (pad == PadMode::circular) ix = wrap(ix, W);
                            else if (ix < 0 || ix >= W) continue;
                            acc += input.at(n, c, iy, ix) * kernel.at(c, 0, u, v);
                        }
                    }
                    out.at(n, c, y, x) = acc;
                }
            }
        }
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int R = a.rows(), K = a.cols();
    if (b.rows() != K)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                                    b.shape_str());
    const int C = b.cols();
    Tensor out = Tensor::matrix(R, C);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        for (int k = 0; k < K; ++k) {
            const double av = a.mat(r, k);
            for (int c = 0; c < C; ++c) out.mat(r, c) += av * b.mat(k, c);
        }
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& t) {
    const int L = t.w();
    const int rows = static_cast<int>(t.numel()) / (L > 0 ? L : 1);
    Tensor out = t;
    double* d = out.data();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        double* row = d + static_cast<std::size_t>(r) * L;
        double m = row[0];
        for (int i = 1; i < L; ++i) m = std::max(m, row[i]);
        double sum = 0.0;
        for (int i = 0; i < L; ++i) {
            row[i] = std::exp(row[i] - m);
            sum += row[i];
        }
        for (int i = 0; i < L; ++i) row[i] /= sum;
    }
    return out;
}

double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& t) {
    Tensor out = t;
    double* d = out.data();
    const int n = static_cast<int>(out.numel());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) d[i] = gelu_scalar(d[i]);
    return out;
}

Tensor grid_sample(const Tensor& field, const std::vector<Coord>& coords, SampleMode mode) {
    if (field.n() != 1)
        throw std::invalid_argument("grid_sample: field batch must be 1");
    const int C = field.c(), H = field.h(), W = field.w();
    const int Q = static_cast<int>(coords.size());
    Tensor out = Tensor::matrix(Q, C);

    if (mode == SampleMode::nearest) {
#pragma omp parallel for schedule(static)
        for (int q = 0; q < Q; ++q) {
            const int iy = coordmap::nearest_index(coords[q].y, H);
            const int ix = coordmap::nearest_index(coords[q].x, W);
            for (int c = 0; c < C; ++c) out.mat(q, c) = field.at(0, c, iy, ix);
        }
    } else {
#pragma omp parallel for schedule(static)
        for (int q = 0; q < Q; ++q) {
            const AxisTaps ty = bilinear_taps(coords[q].y, H);
            const AxisTaps tx = bilinear_taps(coords[q].x, W);
            for (int c = 0; c < C; ++c) {
                const double top = lerp(field.at(0, c, ty.i0, tx.i0), field.at(0, c, ty.i0, tx.i1), tx.f);
                const double bot = lerp(field.at(0, c, ty.i1, tx.i0), field.at(0, c, ty.i1, tx.i1), tx.f);
                out.mat(q, c) = lerp(top, bot, ty.f);
            }
        }
    }
    return out;
}

int scaled_extent(double scale, int n) {
    if (scale <= 0.0) throw std::invalid_argument("resize: scale must be positive");
    int out = static_cast<int>(std::floor(scale * n + 0.5));
    return out < 1 ? 1 : out;
}

Tensor bilinear_resize(const Tensor& image, double scale_h, double scale_w) {
    const int OH = scaled_extent(scale_h, image.h());
    const int OW = scaled_extent(scale_w, image.w());
    const int N = image.n(), C = image.c(), H = image.h(), W = image.w();

    std::vector<Coord> coords;
    coords.reserve(static_cast<std::size_t>(OH) * OW);
    for (int y = 0; y < OH; ++y)
        for (int x = 0; x < OW; ++x)
            coords.push_back({coordmap::cell_center(y, OH), coordmap::cell_center(x, OW)});

    Tensor out(N, C, OH, OW);
    for (int n = 0; n < N; ++n) {
        Tensor slice(1, C, H, W);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) slice.at(0, c, y, x) = image.at(n, c, y, x);
        Tensor rows = grid_sample(slice, coords, SampleMode::bilinear);
        for (int y = 0; y < OH; ++y)
            for (int x = 0; x < OW; ++x)
                for (int c = 0; c < C; ++c) out.at(n, c, y, x) = rows.mat(y * OW + x, c);
    }
    return out;
}

Tensor bicubic_resize_to(const Tensor& image, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bicubic_resize: output extent must be >= 1");
    const int N = image.n(), C = image.c(), H = image.h(), W = image.w();

    // vertical pass
    Tensor mid(N, C, out_h, W);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < out_h; ++y) {
        const double p = (y + 0.5) * (static_cast<double>(H) / out_h) - 0.5;
        const CubicTaps t = cubic_taps(p);
        int rows[4];
        for (int j = 0; j < 4; ++j) rows[j] = clamp_index(t.base - 1 + j, H);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int x = 0; x < W; ++x) {
                    const double center = image.at(n, c, rows[1], x);
                    double acc = center;
                    acc += t.w[0] * (image.at(n, c, rows[0], x) - center);
                    acc += t.w[2] * (image.at(n, c, rows[2], x) - center);
                    acc += t.w[3] * (image.at(n, c, rows[3], x) - center);
                    mid.at(n, c, y, x) = acc;
                }
    }

    // horizontal pass
    Tensor out(N, C, out_h, out_w);
#pragma omp parallel for schedule(static)
    for (int x = 0; x < out_w; ++x) {
        const double p = (x + 0.5) * (static_cast<double>(W) / out_w) - 0.5;
        const CubicTaps t = cubic_taps(p);
        int cols[4];
        for (int j = 0; j < 4; ++j) cols[j] = clamp_index(t.base - 1 + j, W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < out_h; ++y) {
                    const double center = mid.at(n, c, y, cols[1]);
                    double acc = center;
                    acc += t.w[0] * (mid.at(n, c, y, cols[0]) - center);
                    acc += t.w[2] * (mid.at(n, c, y, cols[2]) - center);
                    acc += t.w[3] * (mid.at(n, c, y, cols[3]) - center);
                    out.at(n, c, y, x) = acc;
                }
    }
    return out;
}

Tensor bicubic_resize(const Tensor& image, double scale_h, double scale_w) {
    return bicubic_resize_to(image, scaled_extent(scale_h, image.h()),
                             scaled_extent(scale_w, image.w()));
}

Tensor conv2d_grad_input(const Tensor& gout, const Tensor& kernel, PadMode pad) {
    const int N = gout.n(), Cout = gout.c(), H = gout.h(), W = gout.w();
    const int Cin = kernel.c(), K = kernel.h(), P = (K - 1) / 2;
    Tensor gin(N, Cin, H, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int co = 0; co < Cout; ++co) {
                        for (int u = 0; u < K; ++u) {
                            int oy = iy - u + P;
                            if (pad == PadMode::circular) oy = wrap(oy, H);
                            else if (oy < 0 || oy >= H) continue;
                            for (int v = 0; v < K; ++v) {
                                int ox = ix - v + P;
                                if (pad == PadMode::circular) ox = wrap(ox, W);
                                else if (ox < 0 || ox >= W) continue;
                                acc += gout.at(n, co, oy, ox) * kernel.at(co, ci, u, v);
                            }
                        }
                    }
                    gin.at(n, ci, iy, ix) = acc;
                }
            }
        }
    }
    return gin;
}

Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& input, int k, PadMode pad) {
    const int N = gout.n(), Cout = gout.c(), H = gout.h(), W = gout.w();
    const int Cin = input.c(), P = (k - 1) / 2;
    Tensor gk(Cout, Cin, k, k);
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int u = 0; u < k; ++u) {
                for (int v = 0; v < k; ++v) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        for (int y = 0; y < H; ++y) {
                            int iy = y + u - P;
                            if (pad == PadMode::circular) iy = wrap(iy, H);
                            else if (iy < 0 || iy >= H) continue;
                            for (int x = 0; x < W; ++x) {
                                int ix = x + v - P;
                                if (pad == PadMode::circular) ix = wrap(ix, W);
                                else if (ix < 0 || ix >= W) continue;
                                acc += gout.at(n, co, y, x) * input.at(n, ci, iy, ix);
                            }
                        }
                    }
                    gk.at(co, ci, u, v) = acc;
                }
            }
        }
    }
    return gk;
}

Tensor conv2d_grad_bias(const Tensor& gout) {
    const int Cout = gout.c();
    Tensor gb = Tensor::matrix(1, Cout);
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < gout.n(); ++n)
            for (int y = 0; y < gout.h(); ++y)
                for (int x = 0; x < gout.w(); ++x) acc += gout.at(n, co, y, x);
        gb.mat(0, co) = acc;
    }
    return gb;
}

Tensor depthwise_grad_input(const Tensor& gout, const Tensor& kernel, PadMode pad) {
    const int N = gout.n(), C = gout.c(), H = gout.h(), W = gout.w();
    const int K = kernel.h(), P = (K - 1) / 2;
    Tensor gin(N, C, H, W);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int u = 0; u < K; ++u) {
                        int oy = iy - u + P;
                        if (pad == PadMode::circular) oy = wrap(oy, H);
                        else if (oy < 0 || oy >= H) continue;
                        for (int v = 0; v < K; ++v) {
                            int ox = ix - v + P;
                            if (pad == PadMode::circular) ox = wrap(ox, W);
                            else if (ox < 0 || ox >= W) continue;
                            acc += gout.at(n, c, oy, ox) * kernel.at(c, 0, u, v);
                        }
                    }
                    gin.at(n, c, iy, ix) = acc;
                }
            }
        }
    }
    return gin;
}

Tensor depthwise_grad_kernel(const Tensor& gout, const Tensor& input, int k, PadMode pad) {
    const int N = gout.n(), C = gout.c(), H = gout.h(), W = gout.w();
    const int P = (k - 1) / 2;
    Tensor gk(C, 1, k, k);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        for (int u = 0; u < k; ++u) {
            for (int v = 0; v < k; ++v) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    for (int y = 0; y < H; ++y) {
                        int iy = y + u - P;
                        if (pad == PadMode::circular) iy = wrap(iy, H);
                        else if (iy < 0 || iy >= H) continue;
                        for (int x = 0; x < W; ++x) {
                            int ix = x + v - P;
                            if (pad == PadMode::circular) ix = wrap(ix, W);
                            else if (ix < 0 || ix >= W) continue;
                            acc += gout.at(n, c, y, x) * input.at(n, c, iy, ix);
                        }
                    }
                }
                gk.at(c, 0, u, v) = acc;
            }
        }
    }
    return gk;
}

Tensor grid_sample_bilinear_grad_field(const Tensor& gout, const std::array<int, 4>& field_shape,
                                       const std::vector<Coord>& coords) {
    const int C = field_shape[1], H = field_shape[2], W = field_shape[3];
    const int Q = static_cast<int>(coords.size());
    Tensor gfield(1, C, H, W);
    // scatter: parallel over channels, queries in fixed order within a channel
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        for (int q = 0; q < Q; ++q) {
            const AxisTaps ty = bilinear_taps(coords[q].y, H);
            const AxisTaps tx = bilinear_taps(coords[q].x, W);
            const double g = gout.mat(q, c);
            gfield.at(0, c, ty.i0, tx.i0) += (1.0 - ty.f) * (1.0 - tx.f) * g;
            gfield.at(0, c, ty.i0, tx.i1) += (1.0 - ty.f) * tx.f * g;
            gfield.at(0, c, ty.i1, tx.i0) += ty.f * (1.0 - tx.f) * g;
            gfield.at(0, c, ty.i1, tx.i1) += ty.f * tx.f * g;
        }
    }
    return gfield;
}

} // namespace ops
} // namespace msit
