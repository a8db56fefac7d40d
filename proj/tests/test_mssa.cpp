#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "msit/coords.hpp"
#include "msit/mssa.hpp"
#include "msit/ops.hpp"
#include "msit/params.hpp"
#include "msit/rng.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace msit;
using autodiff::Var;
using test::rand_tensor;

namespace {

Var cv(const Tensor& t) { return Var(t, false); }

// scalar transcription of the whole attention path: serial-reference
// projections, direct bilinear/gather reads, scalar positional logits,
// long-double attention
Tensor mssa_forward_scalar(const Tensor& z_ms, const std::vector<Coord>& hr,
                           const coords::CoordGrid& lr, const coords::FourierEncoder& enc, int r,
                           const mssa::MssaParams& p) {
    std::vector<Tensor> qk, qb, vk, vb;
    for (int i = 0; i < p.n_proj; ++i) {
        qk.push_back(p.q_kernels[i].value());
        qb.push_back(p.q_biases[i].value());
        vk.push_back(p.v_kernels[i].value());
        vb.push_back(p.v_biases[i].value());
    }
    Tensor qf = test_oracle::project_scalar(z_ms, qk, qb, p.fuse_q_w.value(), p.fuse_q_b.value());
    Tensor vf = test_oracle::project_scalar(z_ms, vk, vb, p.fuse_v_w.value(), p.fuse_v_b.value());

    const auto query = mssa::build_attention_query(hr, lr, r);
    const int Q = static_cast<int>(hr.size());
    const int C = z_ms.c(), keys = query.keys, W = lr.width;
    Tensor qhat = Tensor::matrix(Q, C);
    std::vector<double> row(C);
    for (int q = 0; q < Q; ++q) {
        test_oracle::bilinear_read_scalar(qf, hr[q].y, hr[q].x, row.data());
        for (int c = 0; c < C; ++c) qhat.mat(q, c) = row[c];
    }
    Tensor khat = Tensor::matrix(Q * keys, C);
    Tensor vhat = Tensor::matrix(Q * keys, C);
    for (int i = 0; i < Q * keys; ++i) {
        const int idx = query.neighbor_indices[i];
        for (int c = 0; c < C; ++c) {
            khat.mat(i, c) = qf.at(0, c, idx / W, idx % W);
            vhat.mat(i, c) = vf.at(0, c, idx / W, idx % W);
        }
    }
    Tensor pos = test_oracle::fourier_logits_scalar(enc.frequencies, enc.mix_weights, enc.mix_bias,
                                                    query.rel_coords, Q, keys);
    return test_oracle::attention_scalar(qhat, khat, vhat, pos, p.heads, p.logit_scale);
}

} // namespace

TEST_CASE("multiscale_project: identity branch and fuse pass through") {
    Rng rng(71);
    Tensor z = rand_tensor(1, 3, 4, 4, rng);
    Tensor k(3, 3, 1, 1);
    for (int c = 0; c < 3; ++c) k.at(c, c, 0, 0) = 1.0;
    autodiff::NoGradGuard ng;
    Var out = mssa::multiscale_project(cv(z), {cv(k)}, {cv(Tensor::matrix(1, 3))}, cv(k),
                                       cv(Tensor::matrix(1, 3)));
    CHECK(max_abs_diff(out.value(), z) == 0.0);
}

TEST_CASE("multiscale_project: constant input stays constant per channel") {
    Rng rng(72);
    auto p = mssa::make_mssa_params(2, 4, 2, 1.0, rng);
    for (auto& b : p.q_biases) b.value_mut().fill(0.0);
    p.fuse_q_b.value_mut().fill(0.0);
    Tensor z(1, 4, 5, 5);
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) z.at(0, c, y, x) = 0.1 * (c + 1);
    autodiff::NoGradGuard ng;
    Tensor out = mssa::multiscale_project(cv(z), p.q_kernels, p.q_biases, p.fuse_q_w, p.fuse_q_b)
                     .value();
    // interior pixels see identical neighborhoods; compare against the center
    for (int c = 0; c < 4; ++c)
        for (int y = 1; y < 4; ++y)
            for (int x = 1; x < 4; ++x)
                CHECK(out.at(0, c, y, x) == doctest::Approx(out.at(0, c, 2, 2)).epsilon(1e-12));
}

TEST_CASE("multiscale_project matches manual concat-then-pointwise") {
    Rng rng(73);
    auto p = mssa::make_mssa_params(2, 4, 2, 1.0, rng);
    Tensor z = rand_tensor(1, 4, 5, 5, rng);
    autodiff::NoGradGuard ng;
    Tensor got = mssa::multiscale_project(cv(z), p.q_kernels, p.q_biases, p.fuse_q_w, p.fuse_q_b)
                     .value();
    Tensor want = test_oracle::project_scalar(z, {p.q_kernels[0].value(), p.q_kernels[1].value()},
                                              {p.q_biases[0].value(), p.q_biases[1].value()},
                                              p.fuse_q_w.value(), p.fuse_q_b.value());
    CHECK(max_abs_diff(got, want) <= 1e-9);
}

TEST_CASE("build_qkv: lattice coincidence makes qhat equal khat") {
    Rng rng(74);
    Tensor qf = rand_tensor(1, 4, 4, 4, rng);
    Tensor vf = rand_tensor(1, 4, 4, 4, rng);
    auto lr = coords::make_coord_grid(4, 4);
    auto query = mssa::build_attention_query({lr.coords[5]}, lr, 1);
    autodiff::NoGradGuard ng;
    auto qkv = mssa::build_qkv(cv(qf), cv(vf), query);
    for (int c = 0; c < 4; ++c) {
        CHECK(qkv.qhat.value().mat(0, c) == qkv.khat.value().mat(0, c));
        CHECK(qkv.vhat.value().mat(0, c) == vf.at(0, c, 1, 1));
    }
    // offsets vanish on the lattice
    CHECK(query.rel_coords.mat(0, 0) == 0.0);
    CHECK(query.rel_coords.mat(0, 1) == 0.0);
}

TEST_CASE("build_qkv at scale one with r=1: qhat equals khat everywhere") {
    Rng rng(75);
    Tensor qf = rand_tensor(1, 3, 5, 6, rng);
    auto lr = coords::make_coord_grid(5, 6);
    auto hr = coords::make_coord_grid(5, 6);
    auto query = mssa::build_attention_query(hr.coords, lr, 1);
    autodiff::NoGradGuard ng;
    auto qkv = mssa::build_qkv(cv(qf), cv(qf), query);
    CHECK(max_abs_diff(qkv.qhat.value(), qkv.khat.value()) == 0.0);
}

TEST_CASE("build_qkv matches enumeration and direct indexing on random queries") {
    Rng rng(76);
    Tensor qf = rand_tensor(1, 3, 6, 7, rng);
    Tensor vf = rand_tensor(1, 3, 6, 7, rng);
    auto lr = coords::make_coord_grid(6, 7);
    std::vector<Coord> hr;
    for (int i = 0; i < 8; ++i) hr.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    auto query = mssa::build_attention_query(hr, lr, 3);
    autodiff::NoGradGuard ng;
    auto qkv = mssa::build_qkv(cv(qf), cv(vf), query);
    std::vector<double> row(3);
    for (int q = 0; q < 8; ++q) {
        test_oracle::bilinear_read_scalar(qf, hr[q].y, hr[q].x, row.data());
        for (int c = 0; c < 3; ++c)
            CHECK(std::fabs(qkv.qhat.value().mat(q, c) - row[c]) <= 1e-12);
        for (int j = 0; j < 9; ++j) {
            const int idx = query.neighbor_indices[q * 9 + j];
            for (int c = 0; c < 3; ++c) {
                CHECK(qkv.khat.value().mat(q * 9 + j, c) == qf.at(0, c, idx / 7, idx % 7));
                CHECK(qkv.vhat.value().mat(q * 9 + j, c) == vf.at(0, c, idx / 7, idx % 7));
            }
        }
    }
}

TEST_CASE("attention_forward: a single key passes V through untouched") {
    Rng rng(77);
    const int Q = 5, C = 6;
    Tensor qhat = test::rand_matrix(Q, C, rng);
    Tensor khat = test::rand_matrix(Q, C, rng);
    Tensor vhat = test::rand_matrix(Q, C, rng);
    Tensor pos = test::rand_matrix(Q, 1, rng);
    autodiff::NoGradGuard ng;
    Tensor out = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(pos), 2, 3.0).value();
    CHECK(max_abs_diff(out, vhat) == 0.0);
}

TEST_CASE("attention_forward: identical keys and zero bias average V") {
    Rng rng(78);
    const int Q = 3, C = 4, keys = 5;
    Tensor qhat = test::rand_matrix(Q, C, rng);
    Tensor khat = Tensor::matrix(Q * keys, C);
    for (int q = 0; q < Q; ++q)
        for (int j = 0; j < keys; ++j)
            for (int c = 0; c < C; ++c) khat.mat(q * keys + j, c) = 0.3 * c - 0.1 * q;
    Tensor vhat = test::rand_matrix(Q * keys, C, rng);
    Tensor pos = Tensor::matrix(Q, keys);
    autodiff::NoGradGuard ng;
    Tensor out = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(pos), 2, 2.0).value();
    for (int q = 0; q < Q; ++q)
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int j = 0; j < keys; ++j) mean += vhat.mat(q * keys + j, c);
            mean /= keys;
            CHECK(out.mat(q, c) == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("attention_forward matches the scalar-loop recomputation") {
    Rng rng(79);
    const int Q = 4, C = 6, keys = 4, heads = 2;
    Tensor qhat = test::rand_matrix(Q, C, rng);
    Tensor khat = test::rand_matrix(Q * keys, C, rng);
    Tensor vhat = test::rand_matrix(Q * keys, C, rng);
    Tensor pos = test::rand_matrix(Q, keys, rng);
    autodiff::NoGradGuard ng;
    Tensor got = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(pos), heads, 1.3).value();
    Tensor want = test_oracle::attention_scalar(qhat, khat, vhat, pos, heads, 1.3);
    CHECK(max_abs_diff(got, want) <= 1e-9);
}

TEST_CASE("attention weights act as probability distributions") {
    Rng rng(80);
    const int Q = 6, C = 8, keys = 9, heads = 2;
    Tensor qhat = test::rand_matrix(Q, C, rng, -2.0, 2.0);
    Tensor khat = test::rand_matrix(Q * keys, C, rng, -2.0, 2.0);
    Tensor pos = test::rand_matrix(Q, keys, rng, -1.0, 1.0);
    autodiff::NoGradGuard ng;
    Var scores = autodiff::attn_scores(cv(qhat), cv(khat), heads, 2.0);
    Var weights = autodiff::softmax_lastdim(autodiff::add_head_bias(scores, cv(pos), heads));
    for (int r = 0; r < Q * heads; ++r) {
        double sum = 0.0;
        for (int j = 0; j < keys; ++j) {
            const double w = weights.value().mat(r, j);
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("per-query constant logit shifts leave the output unchanged") {
    Rng rng(81);
    const int Q = 4, C = 6, keys = 5, heads = 2;
    Tensor qhat = test::rand_matrix(Q, C, rng);
    Tensor khat = test::rand_matrix(Q * keys, C, rng);
    Tensor vhat = test::rand_matrix(Q * keys, C, rng);
    Tensor pos = test::rand_matrix(Q, keys, rng);
    Tensor shifted = pos;
    for (int q = 0; q < Q; ++q)
        for (int j = 0; j < keys; ++j) shifted.mat(q, j) += 7.5 - q;
    autodiff::NoGradGuard ng;
    Tensor a = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(pos), heads, 2.0).value();
    Tensor b = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(shifted), heads, 2.0).value();
    CHECK(max_abs_diff(a, b) <= 1e-9);
}

TEST_CASE("large logit scale drives the output to the value mean") {
    Rng rng(82);
    const int Q = 3, C = 4, keys = 6;
    Tensor qhat = test::rand_matrix(Q, C, rng);
    Tensor khat = test::rand_matrix(Q * keys, C, rng);
    Tensor vhat = test::rand_matrix(Q * keys, C, rng);
    Tensor pos = Tensor::matrix(Q, keys);
    autodiff::NoGradGuard ng;
    Tensor out = mssa::attention_forward(cv(qhat), cv(khat), cv(vhat), cv(pos), 2, 1e9).value();
    for (int q = 0; q < Q; ++q)
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int j = 0; j < keys; ++j) mean += vhat.mat(q * keys + j, c);
            mean /= keys;
            CHECK(std::fabs(out.mat(q, c) - mean) <= 1e-6);
        }
}

TEST_CASE("mssa_forward: shape contract and permutation equivariance") {
    Rng rng(83);
    const int C = 8;
    auto p = mssa::make_mssa_params(2, C, 2, 2.0, rng);
    auto enc = coords::make_fourier_encoder(4, 9, rng);
    coords::FourierVars fv{cv(enc.frequencies), cv(enc.mix_weights), cv(enc.mix_bias)};
    Tensor z = rand_tensor(1, C, 5, 5, rng);
    auto lr = coords::make_coord_grid(5, 5);
    std::vector<Coord> hr;
    for (int i = 0; i < 7; ++i) hr.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    autodiff::NoGradGuard ng;
    Tensor out = mssa::mssa_forward(cv(z), hr, lr, fv, 3, p).value();
    CHECK(out.rows() == 7);
    CHECK(out.cols() == C);

    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<Coord> hr2;
    for (int i : perm) hr2.push_back(hr[i]);
    Tensor out2 = mssa::mssa_forward(cv(z), hr2, lr, fv, 3, p).value();
    for (int q = 0; q < 7; ++q)
        for (int c = 0; c < C; ++c) CHECK(out2.mat(q, c) == out.mat(perm[q], c));
}

TEST_CASE("mssa_forward: single query equals its batched row") {
    Rng rng(84);
    const int C = 8;
    auto p = mssa::make_mssa_params(2, C, 2, 2.0, rng);
    auto enc = coords::make_fourier_encoder(4, 9, rng);
    coords::FourierVars fv{cv(enc.frequencies), cv(enc.mix_weights), cv(enc.mix_bias)};
    Tensor z = rand_tensor(1, C, 4, 4, rng);
    auto lr = coords::make_coord_grid(4, 4);
    std::vector<Coord> hr;
    for (int i = 0; i < 5; ++i) hr.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    autodiff::NoGradGuard ng;
    Tensor batched = mssa::mssa_forward(cv(z), hr, lr, fv, 3, p).value();
    for (int q = 0; q < 5; ++q) {
        Tensor single = mssa::mssa_forward(cv(z), {hr[q]}, lr, fv, 3, p).value();
        for (int c = 0; c < C; ++c) CHECK(std::fabs(single.mat(0, c) - batched.mat(q, c)) <= 1e-12);
    }
}

TEST_CASE("mssa_forward matches the full scalar oracle on a tiny instance") {
    Rng rng(85);
    const int C = 8;
    auto p = mssa::make_mssa_params(2, C, 1, std::sqrt(8.0), rng);
    auto enc = coords::make_fourier_encoder(4, 9, rng);
    coords::FourierVars fv{cv(enc.frequencies), cv(enc.mix_weights), cv(enc.mix_bias)};
    Tensor z = rand_tensor(1, C, 4, 4, rng);
    auto lr = coords::make_coord_grid(4, 4);
    std::vector<Coord> hr;
    for (int i = 0; i < 5; ++i) hr.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    autodiff::NoGradGuard ng;
    Tensor got = mssa::mssa_forward(cv(z), hr, lr, fv, 3, p).value();
    Tensor want = mssa_forward_scalar(z, hr, lr, enc, 3, p);
    CHECK(max_abs_diff(got, want) <= 1e-9);
}
