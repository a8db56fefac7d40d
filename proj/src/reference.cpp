#include "msit/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace msit::ref {

namespace {

inline int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i > n - 1 ? n - 1 : i); }

// fractional lattice index, border-clamped; no lattice snapping here
inline double frac_index(double coord, int n) {
    double p = (coord + 1.0) * 0.5 * n - 0.5;
    if (p < 0.0) p = 0.0;
    if (p > n - 1.0) p = n - 1.0;
    return p;
}

inline double hat(double s) {
    s = std::fabs(s);
    return s < 1.0 ? 1.0 - s : 0.0;
}

inline double catmull_rom(double s) {
    const double a = -0.5;
    s = std::fabs(s);
    if (s < 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
    if (s < 2.0) return (((s - 5.0) * s + 8.0) * s - 4.0) * a;
    return 0.0;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, PadMode pad) {
    if (kernel.h() % 2 == 0) throw std::invalid_argument("ref::conv2d: even kernel");
    if (kernel.c() != input.c()) throw std::invalid_argument("ref::conv2d: channel mismatch");
    const int N = input.n(), Cin = input.c(), H = input.h(), W = input.w();
    const int Cout = kernel.n(), K = kernel.h(), P = (K - 1) / 2;
    Tensor out(N, Cout, H, W);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = bias ? bias->mat(0, co) : 0.0;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int u = 0; u < K; ++u)
                            for (int v = 0; v < K; ++v) {
                                int iy = y + u - P, ix = x + v - P;
                                if (pad == PadMode::circular) {
                                    iy = wrap(iy, H);
                                    ix = wrap(ix, W);
                                } else if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                                    continue;
                                }
                                acc += input.at(n, ci, iy, ix) * kernel.at(co, ci, u, v);
                            }
                    out.at(n, co, y, x) = acc;
                }
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, PadMode pad) {
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    const int K = kernel.h(), P = (K - 1) / 2;
    Tensor out(N, C, H, W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int u = 0; u < K; ++u)
                        for (int v = 0; v < K; ++v) {
                            int iy = y + u - P, ix = x + v - P;
                            if (pad == PadMode::circular) {
                                iy = wrap(iy, H);
                                ix = wrap(ix, W);
                            } else if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                                continue;
                            }
                            acc += input.at(n, c, iy, ix) * kernel.at(c, 0, u, v);
                        }
                    out.at(n, c, y, x) = acc;
                }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int R = a.rows(), K = a.cols(), C = b.cols();
    if (b.rows() != K) throw std::invalid_argument("ref::matmul: inner dims");
    Tensor out = Tensor::matrix(R, C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += a.mat(r, k) * b.mat(k, c);
            out.mat(r, c) = acc;
        }
    return out;
}

Tensor softmax_lastdim(const Tensor& t) {
    const int L = t.w();
    const int rows = static_cast<int>(t.numel()) / (L > 0 ? L : 1);
    Tensor out = t;
    double* d = out.data();
    for (int r = 0; r < rows; ++r) {
        double* row = d + static_cast<std::size_t>(r) * L;
        long double m = row[0];
        for (int i = 1; i < L; ++i) m = std::max<long double>(m, row[i]);
        long double sum = 0.0L;
        std::vector<long double> e(L);
        for (int i = 0; i < L; ++i) {
            e[i] = expl(static_cast<long double>(row[i]) - m);
            sum += e[i];
        }
        for (int i = 0; i < L; ++i) row[i] = static_cast<double>(e[i] / sum);
    }
    return out;
}

double gelu_quadrature(double x) {
    // Phi(x) = 0.5 + integral_0^x pdf(t) dt, composite Simpson
    const int steps = 20000; // even
    const double h = x / steps;
    const auto pdf = [](double t) { return 0.39894228040143267794 * std::exp(-0.5 * t * t); };
    double s = pdf(0.0) + pdf(x);
    for (int i = 1; i < steps; ++i) s += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
    const double cdf = 0.5 + s * h / 3.0;
    return x * cdf;
}

Tensor grid_sample(const Tensor& field, const std::vector<Coord>& coords, SampleMode mode) {
    const int C = field.c(), H = field.h(), W = field.w();
    const int Q = static_cast<int>(coords.size());
    Tensor out = Tensor::matrix(Q, C);
    for (int q = 0; q < Q; ++q) {
        if (mode == SampleMode::nearest) {
            // exhaustive scan, ties toward the smaller flat index
            double best = 1e300;
            int by = 0, bx = 0;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double cy = -1.0 + (2.0 * i + 1.0) / H;
                    const double cx = -1.0 + (2.0 * j + 1.0) / W;
                    // clamp the query like the border rule does
                    double qy = std::min(std::max(coords[q].y, -1.0 + 1.0 / H), 1.0 - 1.0 / H);
                    double qx = std::min(std::max(coords[q].x, -1.0 + 1.0 / W), 1.0 - 1.0 / W);
                    const double d = (cy - qy) * (cy - qy) + (cx - qx) * (cx - qx);
                    if (d < best - 1e-15) {
                        best = d;
                        by = i;
                        bx = j;
                    }
                }
            for (int c = 0; c < C; ++c) out.mat(q, c) = field.at(0, c, by, bx);
        } else {
            // enumerate hat weights over every lattice point
            const double py = frac_index(coords[q].y, H);
            const double px = frac_index(coords[q].x, W);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) acc += hat(py - i) * hat(px - j) * field.at(0, c, i, j);
                out.mat(q, c) = acc;
            }
        }
    }
    return out;
}

Tensor bicubic_resize_to(const Tensor& image, int out_h, int out_w) {
    const int N = image.n(), C = image.c(), H = image.h(), W = image.w();
    Tensor out(N, C, out_h, out_w);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int x = 0; x < out_w; ++x) {
                    const double py = (y + 0.5) * (static_cast<double>(H) / out_h) - 0.5;
                    const double px = (x + 0.5) * (static_cast<double>(W) / out_w) - 0.5;
                    const int iy = static_cast<int>(std::floor(py));
                    const int ix = static_cast<int>(std::floor(px));
                    double acc = 0.0;
                    for (int u = -1; u <= 2; ++u)
                        for (int v = -1; v <= 2; ++v) {
                            const double w =
                                catmull_rom(py - (iy + u)) * catmull_rom(px - (ix + v));
                            acc += w * image.at(n, c, clamp_index(iy + u, H), clamp_index(ix + v, W));
                        }
                    out.at(n, c, y, x) = acc;
                }
    return out;
}

} // namespace msit::ref
