#include "msit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace msit::autodiff {

namespace {

thread_local bool g_grad_enabled = true;

void accum(const NodePtr& n, const Tensor& g) {
    if (!n->requires_grad) return;
    if (!n->has_grad) {
        n->grad = g;
        n->has_grad = true;
    } else {
        double* d = n->grad.data();
        const double* s = g.data();
        for (std::size_t i = 0; i < n->grad.numel(); ++i) d[i] += s[i];
    }
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> back) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool need = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p && p->requires_grad) need = true;
    if (need) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(back);
    }
    return node;
}

} // namespace

Var::Var(Tensor v, bool requires_grad) {
    node_ = std::make_shared<Node>();
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const {
    if (!node_ || !node_->has_grad)
        throw std::logic_error("Var::grad: no gradient accumulated");
    return node_->grad;
}

void Var::zero_grad() {
    if (node_) {
        node_->has_grad = false;
        node_->grad = Tensor();
    }
}

Var Var::from_node(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved; }

void backward(const Var& root) {
    if (root.value().numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root.node()->requires_grad)
        throw std::logic_error("backward: root does not require grad");

    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root.node()->grad = Tensor::full(1, 1, 1, 1, 1.0);
    root.node()->has_grad = true;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    auto pa = a.node(), pb = b.node();
    return Var::from_node(make_node(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
        accum(pa, self.grad);
        accum(pb, self.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    auto pa = a.node(), pb = b.node();
    return Var::from_node(make_node(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
        accum(pa, self.grad);
        accum(pb, self.grad * -1.0);
    }));
}

Var hadamard(const Var& a, const Var& b) {
    auto pa = a.node(), pb = b.node();
    return Var::from_node(make_node(a.value() * b.value(), {pa, pb}, [pa, pb](Node& self) {
        accum(pa, self.grad * pb->value);
        accum(pb, self.grad * pa->value);
    }));
}

Var scale(const Var& a, double s) {
    auto pa = a.node();
    return Var::from_node(make_node(a.value() * s, {pa}, [pa, s](Node& self) {
        accum(pa, self.grad * s);
    }));
}

namespace {
Tensor transpose_mat(const Tensor& m) {
    Tensor t = Tensor::matrix(m.cols(), m.rows());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) t.mat(c, r) = m.mat(r, c);
    return t;
}
} // namespace

Var matmul(const Var& a, const Var& b) {
    auto pa = a.node(), pb = b.node();
    return Var::from_node(make_node(ops::matmul(a.value(), b.value()), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) accum(pa, ops::matmul(self.grad, transpose_mat(pb->value)));
        if (pb->requires_grad) accum(pb, ops::matmul(transpose_mat(pa->value), self.grad));
    }));
}

Var add_row_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const int R = xv.rows(), C = xv.cols();
    if (bv.rows() != 1 || bv.cols() != C)
        throw std::invalid_argument("add_row_bias: bias width mismatch");
    Tensor out = xv;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.mat(r, c) += bv.mat(0, c);
    auto px = x.node(), pb = bias.node();
    return Var::from_node(make_node(std::move(out), {px, pb}, [px, pb, R, C](Node& self) {
        accum(px, self.grad);
        if (pb->requires_grad) {
            Tensor gb = Tensor::matrix(1, C);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) gb.mat(0, c) += self.grad.mat(r, c);
            accum(pb, gb);
        }
    }));
}

Var gelu(const Var& x) {
    auto px = x.node();
    return Var::from_node(make_node(ops::gelu(x.value()), {px}, [px](Node& self) {
        if (!px->requires_grad) return;
        Tensor g = self.grad;
        double* d = g.data();
        const double* in = px->value.data();
        for (std::size_t i = 0; i < g.numel(); ++i) d[i] *= ops::gelu_derivative(in[i]);
        accum(px, g);
    }));
}

Var softmax_lastdim(const Var& x) {
    auto px = x.node();
    Tensor out = ops::softmax_lastdim(x.value());
    return Var::from_node(make_node(out, {px}, [px](Node& self) {
        if (!px->requires_grad) return;
        const int L = self.value.w();
        const int rows = static_cast<int>(self.value.numel()) / L;
        Tensor gx = self.grad;
        double* g = gx.data();
        const double* s = self.value.data();
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            const std::size_t base = static_cast<std::size_t>(r) * L;
            for (int i = 0; i < L; ++i) dot += g[base + i] * s[base + i];
            for (int i = 0; i < L; ++i) g[base + i] = s[base + i] * (g[base + i] - dot);
        }
        accum(px, gx);
    }));
}

Var abs_val(const Var& x) {
    auto px = x.node();
    Tensor out = x.value();
    double* d = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) d[i] = std::fabs(d[i]);
    return Var::from_node(make_node(std::move(out), {px}, [px](Node& self) {
        if (!px->requires_grad) return;
        Tensor g = self.grad;
        double* gd = g.data();
        const double* in = px->value.data();
        for (std::size_t i = 0; i < g.numel(); ++i)
            gd[i] *= in[i] > 0.0 ? 1.0 : (in[i] < 0.0 ? -1.0 : 0.0);
        accum(px, g);
    }));
}

Var mean_all(const Var& x) {
    auto px = x.node();
    const double inv = 1.0 / static_cast<double>(x.value().numel());
    double s = 0.0;
    const double* d = x.value().data();
    for (std::size_t i = 0; i < x.value().numel(); ++i) s += d[i];
    return Var::from_node(make_node(Tensor::full(1, 1, 1, 1, s * inv), {px}, [px, inv](Node& self) {
        if (!px->requires_grad) return;
        const double g = self.grad.data()[0] * inv;
        Tensor gx(px->value.n(), px->value.c(), px->value.h(), px->value.w());
        gx.fill(g);
        accum(px, gx);
    }));
}

Var l1_loss(const Var& pred, const Var& target) {
    if (!pred.value().same_shape(target.value()))
        throw std::invalid_argument("l1_loss: shape mismatch");
    const std::size_t n = pred.value().numel();
    std::vector<double> mags(n);
    const double* p = pred.value().data();
    const double* t = target.value().data();
    for (std::size_t i = 0; i < n; ++i) mags[i] = std::fabs(p[i] - t[i]);
    std::sort(mags.begin(), mags.end());
    double sum = 0.0;
    for (double m : mags) sum += m;
    auto pp = pred.node(), pt = target.node();
    const double inv = 1.0 / static_cast<double>(n);
    return Var::from_node(make_node(Tensor::full(1, 1, 1, 1, sum * inv), {pp, pt},
                                    [pp, pt, inv](Node& self) {
        const double g = self.grad.data()[0] * inv;
        const double* pv = pp->value.data();
        const double* tv = pt->value.data();
        const auto shape = pp->value.shape();
        Tensor gp(shape[0], shape[1], shape[2], shape[3]);
        for (std::size_t i = 0; i < gp.numel(); ++i) {
            const double d = pv[i] - tv[i];
            gp.data()[i] = g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
        if (pt->requires_grad) accum(pt, gp * -1.0);
        accum(pp, gp);
    }));
}

Var reshape(const Var& x, int n, int c, int h, int w) {
    const auto& v = x.value();
    Tensor out(n, c, h, w);
    if (out.numel() != v.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    std::copy(v.data(), v.data() + v.numel(), out.data());
    auto px = x.node();
    auto shape = v.shape();
    return Var::from_node(make_node(std::move(out), {px}, [px, shape](Node& self) {
        if (!px->requires_grad) return;
        Tensor g(shape[0], shape[1], shape[2], shape[3]);
        std::copy(self.grad.data(), self.grad.data() + self.grad.numel(), g.data());
        accum(px, g);
    }));
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
    const int N = parts[0].value().n(), H = parts[0].value().h(), W = parts[0].value().w();
    int C = 0;
    for (const auto& p : parts) {
        if (p.value().n() != N || p.value().h() != H || p.value().w() != W)
            throw std::invalid_argument("concat_channels: spatial/batch mismatch");
        C += p.value().c();
    }
    Tensor out(N, C, H, W);
    int off = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < v.c(); ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) out.at(n, off + c, y, x) = v.at(n, c, y, x);
        off += v.c();
    }
    std::vector<NodePtr> parents;
    std::vector<int> widths;
    for (const auto& p : parts) {
        parents.push_back(p.node());
        widths.push_back(p.value().c());
    }
    auto parents_copy = parents;
    return Var::from_node(make_node(std::move(out), std::move(parents),
                                    [parents_copy, widths, N, H, W](Node& self) {
        int off = 0;
        for (std::size_t i = 0; i < parents_copy.size(); ++i) {
            const auto& p = parents_copy[i];
            if (p->requires_grad) {
                Tensor g(N, widths[i], H, W);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < widths[i]; ++c)
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x) g.at(n, c, y, x) = self.grad.at(n, off + c, y, x);
                accum(p, g);
            }
            off += widths[i];
        }
    }));
}

Var slice_channels(const Var& x, int c0, int c1) {
    const auto& v = x.value();
    if (c0 < 0 || c1 > v.c() || c0 >= c1)
        throw std::invalid_argument("slice_channels: bad range");
    Tensor out(v.n(), c1 - c0, v.h(), v.w());
    for (int n = 0; n < v.n(); ++n)
        for (int c = c0; c < c1; ++c)
            for (int y = 0; y < v.h(); ++y)
                for (int x = 0; x < v.w(); ++x) out.at(n, c - c0, y, x) = v.at(n, c, y, x);
    auto px = x.node();
    auto shape = v.shape();
    return Var::from_node(make_node(std::move(out), {px}, [px, c0, shape](Node& self) {
        if (!px->requires_grad) return;
        Tensor g(shape[0], shape[1], shape[2], shape[3]);
        for (int n = 0; n < self.grad.n(); ++n)
            for (int c = 0; c < self.grad.c(); ++c)
                for (int y = 0; y < self.grad.h(); ++y)
                    for (int x = 0; x < self.grad.w(); ++x)
                        g.at(n, c0 + c, y, x) = self.grad.at(n, c, y, x);
        accum(px, g);
    }));
}

Var concat_cols(const Var& a, const Var& b) {
    const int R = a.value().rows(), Ca = a.value().cols(), Cb = b.value().cols();
    if (b.value().rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
    Tensor out = Tensor::matrix(R, Ca + Cb);
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < Ca; ++c) out.mat(r, c) = a.value().mat(r, c);
        for (int c = 0; c < Cb; ++c) out.mat(r, Ca + c) = b.value().mat(r, c);
    }
    auto pa = a.node(), pb = b.node();
    return Var::from_node(make_node(std::move(out), {pa, pb}, [pa, pb, R, Ca, Cb](Node& self) {
        if (pa->requires_grad) {
            Tensor g = Tensor::matrix(R, Ca);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < Ca; ++c) g.mat(r, c) = self.grad.mat(r, c);
            accum(pa, g);
        }
        if (pb->requires_grad) {
            Tensor g = Tensor::matrix(R, Cb);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < Cb; ++c) g.mat(r, c) = self.grad.mat(r, Ca + c);
            accum(pb, g);
        }
    }));
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, PadMode pad) {
    const Tensor* bptr = bias.defined() ? &bias.value() : nullptr;
    Tensor out = ops::conv2d(x.value(), kernel.value(), bptr, pad);
    auto px = x.node(), pk = kernel.node();
    auto pb = bias.defined() ? bias.node() : nullptr;
    std::vector<NodePtr> parents{px, pk};
    if (pb) parents.push_back(pb);
    const int k = kernel.value().h();
    return Var::from_node(make_node(std::move(out), std::move(parents), [px, pk, pb, k, pad](Node& self) {
        if (px->requires_grad) accum(px, ops::conv2d_grad_input(self.grad, pk->value, pad));
        if (pk->requires_grad) accum(pk, ops::conv2d_grad_kernel(self.grad, px->value, k, pad));
        if (pb && pb->requires_grad) accum(pb, ops::conv2d_grad_bias(self.grad));
    }));
}

Var depthwise_conv2d(const Var& x, const Var& kernel, PadMode pad) {
    Tensor out = ops::depthwise_conv2d(x.value(), kernel.value(), pad);
    auto px = x.node(), pk = kernel.node();
    const int k = kernel.value().h();
    return Var::from_node(make_node(std::move(out), {px, pk}, [px, pk, k, pad](Node& self) {
        if (px->requires_grad) accum(px, ops::depthwise_grad_input(self.grad, pk->value, pad));
        if (pk->requires_grad) accum(pk, ops::depthwise_grad_kernel(self.grad, px->value, k, pad));
    }));
}

Var expand_group_kernels(const Var& kernels, int channels) {
    const auto& kv = kernels.value();
    const int G = kv.n(), K = kv.h();
    if (channels % G != 0)
        throw std::invalid_argument("expand_group_kernels: channels not divisible by groups");
    const int per = channels / G;
    Tensor out(channels, 1, K, K);
    for (int c = 0; c < channels; ++c) {
        const int g = c / per;
        for (int u = 0; u < K; ++u)
            for (int v = 0; v < K; ++v) out.at(c, 0, u, v) = kv.at(g, 0, u, v);
    }
    auto pk = kernels.node();
    return Var::from_node(make_node(std::move(out), {pk}, [pk, G, per, K, channels](Node& self) {
        if (!pk->requires_grad) return;
        Tensor g(G, 1, K, K);
        for (int c = 0; c < channels; ++c) {
            const int grp = c / per;
            for (int u = 0; u < K; ++u)
                for (int v = 0; v < K; ++v) g.at(grp, 0, u, v) += self.grad.at(c, 0, u, v);
        }
        accum(pk, g);
    }));
}

Var grid_sample_bilinear(const Var& field, const std::vector<Coord>& coords) {
    Tensor rows = ops::grid_sample(field.value(), coords, SampleMode::bilinear);
    const int Q = rows.rows(), C = rows.cols();
    Tensor out = Tensor::matrix(Q, C);
    std::copy(rows.data(), rows.data() + rows.numel(), out.data());
    auto pf = field.node();
    auto shape = field.value().shape();
    return Var::from_node(make_node(std::move(out), {pf}, [pf, shape, coords](Node& self) {
        if (!pf->requires_grad) return;
        accum(pf, ops::grid_sample_bilinear_grad_field(self.grad, shape, coords));
    }));
}

Var gather_pixels(const Var& field, const std::vector<int>& flat_idx) {
    const auto& fv = field.value();
    const int C = fv.c(), H = fv.h(), W = fv.w();
    const int Q = static_cast<int>(flat_idx.size());
    Tensor out = Tensor::matrix(Q, C);
    for (int q = 0; q < Q; ++q) {
        const int iy = flat_idx[q] / W, ix = flat_idx[q] % W;
        for (int c = 0; c < C; ++c) out.mat(q, c) = fv.at(0, c, iy, ix);
    }
    auto pf = field.node();
    return Var::from_node(make_node(std::move(out), {pf}, [pf, flat_idx, C, H, W, Q](Node& self) {
        if (!pf->requires_grad) return;
        Tensor g(1, C, H, W);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c)
            for (int q = 0; q < Q; ++q) {
                const int iy = flat_idx[q] / W, ix = flat_idx[q] % W;
                g.at(0, c, iy, ix) += self.grad.mat(q, c);
            }
        accum(pf, g);
    }));
}

Var fourier_features(const Tensor& delta, const Var& omega) {
    const int R = delta.rows();
    const auto& ov = omega.value();
    const int G = ov.h();
    if (ov.w() != 2 || delta.cols() != 2)
        throw std::invalid_argument("fourier_features: expected (dy,dx) pairs");
    const double two_pi = 6.283185307179586476925286766559;
    Tensor out = Tensor::matrix(R, 4 * G);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < R; ++i) {
        for (int j = 0; j < G; ++j) {
            for (int k = 0; k < 2; ++k) {
                const double a = two_pi * ov.at(0, 0, j, k) * delta.mat(i, k);
                out.mat(i, 2 * j + k) = std::sin(a);
                out.mat(i, 2 * G + 2 * j + k) = std::cos(a);
            }
        }
    }
    auto po = omega.node();
    return Var::from_node(make_node(std::move(out), {po}, [po, delta, R, G, two_pi](Node& self) {
        if (!po->requires_grad) return;
        Tensor g(1, 1, G, 2);
        for (int j = 0; j < G; ++j) {
            for (int k = 0; k < 2; ++k) {
                double acc = 0.0;
                for (int i = 0; i < R; ++i) {
                    const double a = two_pi * po->value.at(0, 0, j, k) * delta.mat(i, k);
                    acc += self.grad.mat(i, 2 * j + k) * std::cos(a) * two_pi * delta.mat(i, k);
                    acc -= self.grad.mat(i, 2 * G + 2 * j + k) * std::sin(a) * two_pi * delta.mat(i, k);
                }
                g.at(0, 0, j, k) = acc;
            }
        }
        accum(po, g);
    }));
}

Var fourier_mix(const Var& feat, const Var& w, const Var& b, int queries, int keys) {
    const auto& fv = feat.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    const int F = fv.cols();
    if (fv.rows() != queries * keys || wv.rows() != F || wv.cols() != keys || bv.cols() != keys)
        throw std::invalid_argument("fourier_mix: shape mismatch");
    Tensor out = Tensor::matrix(queries, keys);
#pragma omp parallel for schedule(static)
    for (int q = 0; q < queries; ++q)
        for (int j = 0; j < keys; ++j) {
            double acc = bv.mat(0, j);
            for (int f = 0; f < F; ++f) acc += fv.mat(q * keys + j, f) * wv.mat(f, j);
            out.mat(q, j) = acc;
        }
    auto pf = feat.node(), pw = w.node(), pb = b.node();
    return Var::from_node(make_node(std::move(out), {pf, pw, pb},
                                    [pf, pw, pb, queries, keys, F](Node& self) {
        if (pf->requires_grad) {
            Tensor g = Tensor::matrix(queries * keys, F);
#pragma omp parallel for schedule(static)
            for (int q = 0; q < queries; ++q)
                for (int j = 0; j < keys; ++j)
                    for (int f = 0; f < F; ++f)
                        g.mat(q * keys + j, f) = self.grad.mat(q, j) * pw->value.mat(f, j);
            accum(pf, g);
        }
        if (pw->requires_grad) {
            Tensor g = Tensor::matrix(F, keys);
            for (int q = 0; q < queries; ++q)
                for (int j = 0; j < keys; ++j)
                    for (int f = 0; f < F; ++f)
                        g.mat(f, j) += pf->value.mat(q * keys + j, f) * self.grad.mat(q, j);
            accum(pw, g);
        }
        if (pb->requires_grad) {
            Tensor g = Tensor::matrix(1, keys);
            for (int q = 0; q < queries; ++q)
                for (int j = 0; j < keys; ++j) g.mat(0, j) += self.grad.mat(q, j);
            accum(pb, g);
        }
    }));
}

Var attn_scores(const Var& qhat, const Var& khat, int heads, double logit_scale) {
    const auto& qv = qhat.value();
    const auto& kv = khat.value();
    const int Q = qv.rows(), C = qv.cols();
    if (kv.rows() % Q != 0 || kv.cols() != C)
        throw std::invalid_argument("attn_scores: key shape mismatch");
    if (C % heads != 0) throw std::invalid_argument("attn_scores: heads must divide channels");
    const int keys = kv.rows() / Q;
    const int d = C / heads;
    const double inv = 1.0 / logit_scale;
    Tensor out = Tensor::matrix(Q * heads, keys);
#pragma omp parallel for schedule(static)
    for (int q = 0; q < Q; ++q)
        for (int h = 0; h < heads; ++h)
            for (int j = 0; j < keys; ++j) {
                double acc = 0.0;
                for (int e = 0; e < d; ++e)
                    acc += qv.mat(q, h * d + e) * kv.mat(q * keys + j, h * d + e);
                out.mat(q * heads + h, j) = acc * inv;
            }
    auto pq = qhat.node(), pk = khat.node();
    return Var::from_node(make_node(std::move(out), {pq, pk},
                                    [pq, pk, Q, heads, keys, d, inv](Node& self) {
        if (pq->requires_grad) {
            Tensor g = Tensor::matrix(Q, heads * d);
#pragma omp parallel for schedule(static)
            for (int q = 0; q < Q; ++q)
                for (int h = 0; h < heads; ++h)
                    for (int e = 0; e < d; ++e) {
                        double acc = 0.0;
                        for (int j = 0; j < keys; ++j)
                            acc += self.grad.mat(q * heads + h, j) * pk->value.mat(q * keys + j, h * d + e);
                        g.mat(q, h * d + e) = acc * inv;
                    }
            accum(pq, g);
        }
        if (pk->requires_grad) {
            Tensor g = Tensor::matrix(Q * keys, heads * d);
#pragma omp parallel for schedule(static)
            for (int q = 0; q < Q; ++q)
                for (int j = 0; j < keys; ++j)
                    for (int h = 0; h < heads; ++h)
                        for (int e = 0; e < d; ++e)
                            g.mat(q * keys + j, h * d + e) =
                                self.grad.mat(q * heads + h, j) * pq->value.mat(q, h * d + e) * inv;
            accum(pk, g);
        }
    }));
}

Var add_head_bias(const Var& scores, const Var& bias, int heads) {
    const auto& sv = scores.value();
    const auto& bv = bias.value();
    const int rows = sv.rows(), keys = sv.cols();
    const int Q = rows / heads;
    if (bv.rows() != Q || bv.cols() != keys)
        throw std::invalid_argument("add_head_bias: bias shape mismatch");
    Tensor out = sv;
    for (int q = 0; q < Q; ++q)
        for (int h = 0; h < heads; ++h)
            for (int j = 0; j < keys; ++j) out.mat(q * heads + h, j) += bv.mat(q, j);
    auto ps = scores.node(), pb = bias.node();
    return Var::from_node(make_node(std::move(out), {ps, pb}, [ps, pb, Q, heads, keys](Node& self) {
        accum(ps, self.grad);
        if (pb->requires_grad) {
            Tensor g = Tensor::matrix(Q, keys);
            for (int q = 0; q < Q; ++q)
                for (int h = 0; h < heads; ++h)
                    for (int j = 0; j < keys; ++j) g.mat(q, j) += self.grad.mat(q * heads + h, j);
            accum(pb, g);
        }
    }));
}

Var attn_apply(const Var& weights, const Var& vhat, int heads) {
    const auto& wv = weights.value();
    const auto& vv = vhat.value();
    const int keys = wv.cols(), C = vv.cols();
    const int Q = wv.rows() / heads;
    if (vv.rows() != Q * keys || C % heads != 0)
        throw std::invalid_argument("attn_apply: shape mismatch");
    const int d = C / heads;
    Tensor out = Tensor::matrix(Q, C);
#pragma omp parallel for schedule(static)
    for (int q = 0; q < Q; ++q)
        for (int h = 0; h < heads; ++h)
            for (int e = 0; e < d; ++e) {
                double acc = 0.0;
                for (int j = 0; j < keys; ++j)
                    acc += wv.mat(q * heads + h, j) * vv.mat(q * keys + j, h * d + e);
                out.mat(q, h * d + e) = acc;
            }
    auto pw = weights.node(), pv = vhat.node();
    return Var::from_node(make_node(std::move(out), {pw, pv}, [pw, pv, Q, heads, keys, d](Node& self) {
        if (pw->requires_grad) {
            Tensor g = Tensor::matrix(Q * heads, keys);
#pragma omp parallel for schedule(static)
            for (int q = 0; q < Q; ++q)
                for (int h = 0; h < heads; ++h)
                    for (int j = 0; j < keys; ++j) {
                        double acc = 0.0;
                        for (int e = 0; e < d; ++e)
                            acc += self.grad.mat(q, h * d + e) * pv->value.mat(q * keys + j, h * d + e);
                        g.mat(q * heads + h, j) = acc;
                    }
            accum(pw, g);
        }
        if (pv->requires_grad) {
            Tensor g = Tensor::matrix(Q * keys, heads * d);
#pragma omp parallel for schedule(static)
            for (int q = 0; q < Q; ++q)
                for (int j = 0; j < keys; ++j)
                    for (int h = 0; h < heads; ++h)
                        for (int e = 0; e < d; ++e)
                            g.mat(q * keys + j, h * d + e) =
                                pw->value.mat(q * heads + h, j) * self.grad.mat(q, h * d + e);
            accum(pv, g);
        }
    }));
}

} // namespace msit::autodiff
