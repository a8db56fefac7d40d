#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "msit/autodiff.hpp"
#include "msit/rng.hpp"
#include "test_support.hpp"

using namespace msit;
using autodiff::Var;
using test::rand_tensor;

namespace {

// max relative error between analytic gradients and central differences over
// every element of every leaf
double fd_check(const std::function<Var(std::vector<Var>&)>& f, std::vector<Var>& leaves,
                double eps = 1e-5) {
    Var loss = f(leaves);
    autodiff::backward(loss);
    double worst = 0.0;
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) continue;
        Tensor analytic = leaf.grad();
        for (std::size_t i = 0; i < leaf.value().numel(); ++i) {
            const double saved = leaf.value_mut().data()[i];
            leaf.value_mut().data()[i] = saved + eps;
            const double up = f(leaves).value().data()[0];
            leaf.value_mut().data()[i] = saved - eps;
            const double down = f(leaves).value().data()[0];
            leaf.value_mut().data()[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic.data()[i];
            const double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// project the output to a scalar with fixed random weights so every output
// entry contributes
Var project(const Var& out, Rng& rng) {
    const auto& s = out.value().shape();
    Var proj(rand_tensor(s[0], s[1], s[2], s[3], rng), false);
    return autodiff::mean_all(autodiff::hadamard(out, proj));
}

} // namespace

TEST_CASE("gradients: elementwise and linear ops") {
    Rng rng(21);
    std::vector<Var> leaves{Var(rand_tensor(1, 1, 3, 4, rng), true),
                            Var(rand_tensor(1, 1, 3, 4, rng), true)};
    Rng prng(22);
    auto f = [&](std::vector<Var>& v) {
        Rng r(22);
        Var sum = autodiff::add(v[0], autodiff::scale(v[1], -1.3));
        Var prod = autodiff::hadamard(sum, autodiff::sub(v[0], v[1]));
        return project(prod, r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: matmul and row bias") {
    Rng rng(23);
    std::vector<Var> leaves{Var(test::rand_matrix(3, 4, rng), true),
                            Var(test::rand_matrix(4, 2, rng), true),
                            Var(test::rand_matrix(1, 2, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(24);
        return project(autodiff::add_row_bias(autodiff::matmul(v[0], v[1]), v[2]), r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: gelu, softmax, abs, mean") {
    Rng rng(25);
    std::vector<Var> leaves{Var(test::rand_matrix(4, 5, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(26);
        Var g = autodiff::gelu(v[0]);
        Var s = autodiff::softmax_lastdim(g);
        return project(autodiff::abs_val(s), r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: conv2d wrt input, kernel, bias (both pad modes)") {
    Rng rng(27);
    for (PadMode pad : {PadMode::zero, PadMode::circular}) {
        std::vector<Var> leaves{Var(rand_tensor(1, 2, 4, 5, rng), true),
                                Var(rand_tensor(3, 2, 3, 3, rng), true),
                                Var(test::rand_matrix(1, 3, rng), true)};
        auto f = [&, pad](std::vector<Var>& v) {
            Rng r(28);
            return project(autodiff::conv2d(v[0], v[1], v[2], pad), r);
        };
        CHECK(fd_check(f, leaves) <= 1e-6);
    }
}

TEST_CASE("gradients: depthwise conv and group-kernel broadcast") {
    Rng rng(29);
    for (PadMode pad : {PadMode::zero, PadMode::circular}) {
        std::vector<Var> leaves{Var(rand_tensor(1, 4, 4, 4, rng), true),
                                Var(rand_tensor(2, 1, 3, 3, rng), true)};
        auto f = [&, pad](std::vector<Var>& v) {
            Rng r(30);
            Var expanded = autodiff::expand_group_kernels(v[1], 4);
            return project(autodiff::depthwise_conv2d(v[0], expanded, pad), r);
        };
        CHECK(fd_check(f, leaves) <= 1e-6);
    }
}

TEST_CASE("gradients: structure ops") {
    Rng rng(31);
    std::vector<Var> leaves{Var(rand_tensor(1, 2, 3, 3, rng), true),
                            Var(rand_tensor(1, 3, 3, 3, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(32);
        Var cat = autodiff::concat_channels({v[0], v[1]});
        Var sl = autodiff::slice_channels(cat, 1, 4);
        Var flat = autodiff::reshape(sl, 1, 1, 9, 3);
        return project(autodiff::concat_cols(flat, flat), r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: grid_sample and gather wrt the field") {
    Rng rng(33);
    std::vector<Coord> coords;
    for (int i = 0; i < 7; ++i) coords.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    std::vector<int> idx{0, 3, 7, 11, 5, 5, 2};
    std::vector<Var> leaves{Var(rand_tensor(1, 3, 3, 4, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(34);
        Var a = autodiff::grid_sample_bilinear(v[0], coords);
        Var b = autodiff::gather_pixels(v[0], idx);
        return autodiff::add(project(a, r), project(b, r));
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: fourier features and mix") {
    Rng rng(35);
    const int Q = 3, keys = 4, g = 2;
    Tensor delta = test::rand_matrix(Q * keys, 2, rng, -0.5, 0.5);
    std::vector<Var> leaves{Var(rand_tensor(1, 1, g, 2, rng), true),
                            Var(test::rand_matrix(4 * g, keys, rng), true),
                            Var(test::rand_matrix(1, keys, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(36);
        Var feat = autodiff::fourier_features(delta, v[0]);
        return project(autodiff::fourier_mix(feat, v[1], v[2], Q, keys), r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradients: attention cores") {
    Rng rng(37);
    const int Q = 3, keys = 4, C = 6, heads = 2;
    std::vector<Var> leaves{Var(test::rand_matrix(Q, C, rng), true),
                            Var(test::rand_matrix(Q * keys, C, rng), true),
                            Var(test::rand_matrix(Q * keys, C, rng), true),
                            Var(test::rand_matrix(Q, keys, rng), true)};
    auto f = [&](std::vector<Var>& v) {
        Rng r(38);
        Var scores = autodiff::attn_scores(v[0], v[1], heads, 1.7);
        Var logits = autodiff::add_head_bias(scores, v[3], heads);
        Var weights = autodiff::softmax_lastdim(logits);
        return project(autodiff::attn_apply(weights, v[2], heads), r);
    };
    CHECK(fd_check(f, leaves) <= 1e-6);
}

TEST_CASE("gradient accumulation when a leaf is used twice") {
    Var x(Tensor::full(1, 1, 1, 1, 3.0), true);
    Var y = autodiff::hadamard(x, x); // d/dx x^2 = 2x
    autodiff::backward(autodiff::mean_all(y));
    CHECK(x.grad().data()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("NoGradGuard suppresses graph construction") {
    Var x(Tensor::full(1, 1, 2, 2, 1.0), true);
    autodiff::NoGradGuard ng;
    Var y = autodiff::scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("backward requires a scalar root") {
    Var x(Tensor::full(1, 1, 2, 2, 1.0), true);
    Var y = autodiff::scale(x, 2.0);
    CHECK_THROWS_AS(autodiff::backward(y), std::invalid_argument);
}
