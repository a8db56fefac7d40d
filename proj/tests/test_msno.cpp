#include "doctest.h"

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "msit/msno.hpp"
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
} // namespace

TEST_CASE("fem_shift_direct: zero strides are the identity") {
    Rng rng(51);
    Tensor z = rand_tensor(1, 8, 4, 4, rng);
    std::array<int, 8> strides{};
    CHECK(max_abs_diff(msno::fem_shift_direct(z, strides), z) == 0.0);
}

TEST_CASE("fem_shift_direct is a pure permutation per channel") {
    Rng rng(52);
    Tensor z = rand_tensor(2, 16, 5, 6, rng);
    std::array<int, 8> strides{1, 2, 0, 3, 1, 2, 1, 1};
    Tensor shifted = msno::fem_shift_direct(z, strides);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 16; ++c) {
            std::vector<double> a, b;
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 6; ++x) {
                    a.push_back(z.at(n, c, y, x));
                    b.push_back(shifted.at(n, c, y, x));
                }
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            CHECK(a == b); // same value multiset, so sums are conserved
        }
}

TEST_CASE("fem_shift_direct: the right-group roll") {
    Tensor z(1, 8, 4, 4);
    for (int c = 0; c < 8; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) z.at(0, c, y, x) = 100 * c + 10 * y + x;
    std::array<int, 8> strides;
    strides.fill(1);
    Tensor shifted = msno::fem_shift_direct(z, strides);
    // channel 7 belongs to the "right" group: row [a,b,c,d] -> [d,a,b,c]
    for (int y = 0; y < 4; ++y) {
        CHECK(shifted.at(0, 7, y, 0) == z.at(0, 7, y, 3));
        CHECK(shifted.at(0, 7, y, 1) == z.at(0, 7, y, 0));
        CHECK(shifted.at(0, 7, y, 2) == z.at(0, 7, y, 1));
        CHECK(shifted.at(0, 7, y, 3) == z.at(0, 7, y, 2));
    }
    // channel 0 is "up": column rolls upward
    for (int x = 0; x < 4; ++x) {
        CHECK(shifted.at(0, 0, 0, x) == z.at(0, 0, 1, x));
        CHECK(shifted.at(0, 0, 3, x) == z.at(0, 0, 0, x));
    }
}

TEST_CASE("fem_shift_direct rejects channel counts not divisible by 8") {
    std::array<int, 8> strides{};
    CHECK_THROWS_AS(msno::fem_shift_direct(Tensor(1, 12, 4, 4), strides), std::invalid_argument);
}

TEST_CASE("fem_shift_conv equals fem_shift_direct on random tensors") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        std::array<int, 8> strides;
        for (auto& s : strides) s = rng.uniform_int(4);
        auto params = msno::make_fem_params(strides);
        Tensor z = rand_tensor(1, 8, 4 + rng.uniform_int(4), 4 + rng.uniform_int(4), rng);
        autodiff::NoGradGuard ng;
        Tensor got = msno::fem_shift_conv(cv(z), params).value();
        Tensor want = msno::fem_shift_direct(z, strides);
        CHECK(max_abs_diff(got, want) <= 1e-12);
    }
}

TEST_CASE("one-hot kernel at the center is the identity") {
    Rng rng(54);
    std::array<int, 8> strides{};
    auto params = msno::make_fem_params(strides);
    CHECK(params.kernel_size == 1);
    Tensor z = rand_tensor(1, 8, 5, 5, rng);
    autodiff::NoGradGuard ng;
    CHECK(max_abs_diff(msno::fem_shift_conv(cv(z), params).value(), z) == 0.0);
}

TEST_CASE("a kernel hot at mid-left shifts content right under circular padding") {
    Rng rng(55);
    Tensor z = rand_tensor(1, 1, 4, 4, rng);
    Tensor k(1, 1, 3, 3);
    k.at(0, 0, 1, 0) = 1.0;
    Tensor got = ops::depthwise_conv2d(z, k, PadMode::circular);
    CHECK(max_abs_diff(got, test::roll2d(z, 0, 1)) == 0.0);
}

TEST_CASE("msc_apply: t=1 reduces to one 3x3 convolution over all channels") {
    Rng rng(56);
    auto params = msno::make_msc_params(1, 4, rng);
    Tensor z = rand_tensor(1, 4, 5, 5, rng);
    autodiff::NoGradGuard ng;
    auto groups = msno::msc_apply(cv(z), params);
    REQUIRE(groups.size() == 1);
    Tensor want = ops::conv2d(z, params.kernels[0].value(), &params.biases[0].value(), PadMode::zero);
    CHECK(max_abs_diff(groups[0].value(), want) == 0.0);
}

TEST_CASE("msc_apply: branch impulse response stays inside its kernel window") {
    Rng rng(57);
    const int t = 3, C = 6, H = 15, W = 15;
    auto params = msno::make_msc_params(t, C, rng);
    for (auto& b : params.biases) b.value_mut().fill(0.0);
    for (int i = 0; i < t; ++i) {
        Tensor z(1, C, H, W);
        z.at(0, i * 2, H / 2, W / 2) = 1.0; // impulse in group i
        autodiff::NoGradGuard ng;
        auto groups = msno::msc_apply(cv(z), params);
        const int reach = i + 1; // kernel 2(i+1)+1 has radius i+1
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (std::abs(y - H / 2) > reach || std::abs(x - W / 2) > reach)
                        CHECK(groups[i].value().at(0, c, y, x) == 0.0);
    }
}

TEST_CASE("msc_apply matches manual split-and-convolve") {
    Rng rng(58);
    auto params = msno::make_msc_params(2, 4, rng);
    Tensor z = rand_tensor(1, 4, 6, 6, rng);
    autodiff::NoGradGuard ng;
    auto groups = msno::msc_apply(cv(z), params);
    for (int i = 0; i < 2; ++i) {
        Tensor half(1, 2, 6, 6);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x) half.at(0, c, y, x) = z.at(0, i * 2 + c, y, x);
        Tensor want =
            ops::conv2d(half, params.kernels[i].value(), &params.biases[i].value(), PadMode::zero);
        CHECK(max_abs_diff(groups[i].value(), want) <= 1e-12);
    }
}

TEST_CASE("msc divisibility errors") {
    Rng rng(59);
    CHECK_THROWS_AS(msno::make_msc_params(4, 6, rng), std::invalid_argument);
    auto params = msno::make_msc_params(2, 4, rng);
    autodiff::NoGradGuard ng;
    CHECK_THROWS_AS(msno::msc_apply(cv(Tensor(1, 5, 4, 4)), params), std::invalid_argument);
}

TEST_CASE("sim_merge: zero input and zero biases give zero output") {
    Rng rng(60);
    auto params = msno::make_sim_params(2, 4, rng);
    for (auto& b : params.scale_mix_b) b.value_mut().fill(0.0);
    params.cross_mix_b.value_mut().fill(0.0);
    params.modulation_b.value_mut().fill(0.0);
    autodiff::NoGradGuard ng;
    std::vector<Var> groups{cv(Tensor(1, 2, 3, 3)), cv(Tensor(1, 2, 3, 3))};
    Tensor out = msno::sim_merge(groups, params, cv(Tensor(1, 4, 3, 3))).value();
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("sim_merge with all-ones modulation equals the unmodulated path") {
    Rng rng(61);
    auto params = msno::make_sim_params(2, 4, rng);
    params.modulation_w.value_mut().fill(0.0);
    params.modulation_b.value_mut().fill(1.0);
    Tensor g0 = rand_tensor(1, 2, 3, 3, rng);
    Tensor g1 = rand_tensor(1, 2, 3, 3, rng);
    autodiff::NoGradGuard ng;
    std::vector<Var> groups{cv(g0), cv(g1)};
    Var src = autodiff::concat_channels(groups);
    Tensor got = msno::sim_merge(groups, params, src).value();

    // unmodulated path recomputed directly
    Tensor a0 = ops::gelu(ops::conv2d(g0, params.scale_mix_w[0].value(),
                                      &params.scale_mix_b[0].value(), PadMode::zero));
    Tensor a1 = ops::gelu(ops::conv2d(g1, params.scale_mix_w[1].value(),
                                      &params.scale_mix_b[1].value(), PadMode::zero));
    Tensor cat(1, 4, 3, 3);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                cat.at(0, c, y, x) = a0.at(0, c, y, x);
                cat.at(0, 2 + c, y, x) = a1.at(0, c, y, x);
            }
    Tensor want = ops::conv2d(cat, params.cross_mix_w.value(), &params.cross_mix_b.value(),
                              PadMode::zero);
    CHECK(max_abs_diff(got, want) == 0.0);
}

TEST_CASE("sim_merge matches the scalar recomputation") {
    Rng rng(62);
    auto params = msno::make_sim_params(2, 4, rng);
    Tensor g0 = rand_tensor(1, 2, 3, 3, rng);
    Tensor g1 = rand_tensor(1, 2, 3, 3, rng);
    Tensor src = rand_tensor(1, 4, 3, 3, rng);
    autodiff::NoGradGuard ng;
    Tensor got = msno::sim_merge({cv(g0), cv(g1)}, params, cv(src)).value();
    Tensor want = test_oracle::sim_merge_scalar(
        {g0, g1}, {params.scale_mix_w[0].value(), params.scale_mix_w[1].value()},
        {params.scale_mix_b[0].value(), params.scale_mix_b[1].value()}, params.cross_mix_w.value(),
        params.cross_mix_b.value(), params.modulation_w.value(), params.modulation_b.value(), src);
    CHECK(max_abs_diff(got, want) <= 1e-9);
}

TEST_CASE("sim_merge linearity with the identity-activation hook") {
    Rng rng(63);
    auto params = msno::make_sim_params(2, 4, rng);
    params.identity_activation = true;
    for (auto& b : params.scale_mix_b) b.value_mut().fill(0.0);
    params.cross_mix_b.value_mut().fill(0.0);
    params.modulation_w.value_mut().fill(0.0);
    params.modulation_b.value_mut().fill(1.0);
    Tensor g0 = rand_tensor(1, 2, 3, 3, rng);
    Tensor g1 = rand_tensor(1, 2, 3, 3, rng);
    autodiff::NoGradGuard ng;
    Tensor once = msno::sim_merge({cv(g0), cv(g1)}, params, cv(Tensor(1, 4, 3, 3))).value();
    Tensor twice = msno::sim_merge({cv(g0 * 2.0), cv(g1 * 2.0)}, params, cv(Tensor(1, 4, 3, 3))).value();
    CHECK(max_abs_diff(twice, once * 2.0) <= 1e-12);
}

TEST_CASE("msno_forward: shape contract") {
    Rng rng(64);
    for (int C : {8, 16}) {
        msno::MsnoParams params;
        std::array<int, 8> strides;
        strides.fill(1);
        params.fem = msno::make_fem_params(strides);
        params.msc = msno::make_msc_params(4, C, rng);
        params.sim = msno::make_sim_params(4, C, rng);
        Tensor z = rand_tensor(1, C, 10, 11, rng);
        autodiff::NoGradGuard ng;
        Tensor out = msno::msno_forward(cv(z), params).value();
        CHECK(out.n() == 1);
        CHECK(out.c() == C);
        CHECK(out.h() == 10);
        CHECK(out.w() == 11);
        CHECK(out.all_finite());
    }
}

TEST_CASE("msno_forward with identity FEM equals msno without FEM") {
    Rng rng(65);
    msno::MsnoParams with_fem;
    std::array<int, 8> zero_strides{};
    with_fem.fem = msno::make_fem_params(zero_strides);
    with_fem.msc = msno::make_msc_params(2, 8, rng);
    with_fem.sim = msno::make_sim_params(2, 8, rng);

    msno::MsnoParams no_fem = with_fem;
    no_fem.use_fem = false;

    Tensor z = rand_tensor(1, 8, 6, 6, rng);
    autodiff::NoGradGuard ng;
    CHECK(max_abs_diff(msno::msno_forward(cv(z), with_fem).value(),
                       msno::msno_forward(cv(z), no_fem).value()) == 0.0);
}

TEST_CASE("msno_forward equals manual three-stage application") {
    Rng rng(66);
    msno::MsnoParams params;
    std::array<int, 8> strides{1, 0, 2, 1, 1, 0, 1, 2};
    params.fem = msno::make_fem_params(strides);
    params.msc = msno::make_msc_params(2, 8, rng);
    params.sim = msno::make_sim_params(2, 8, rng);
    Tensor z = rand_tensor(1, 8, 7, 7, rng);
    autodiff::NoGradGuard ng;
    Tensor got = msno::msno_forward(cv(z), params).value();

    Var enriched = msno::fem_shift_conv(cv(z), params.fem);
    auto groups = msno::msc_apply(enriched, params.msc);
    Var stacked = autodiff::concat_channels(groups);
    Tensor want = msno::sim_merge(groups, params.sim, stacked).value();
    CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("msno_forward without SIM uses the plain pointwise merge") {
    Rng rng(67);
    msno::MsnoParams params;
    params.use_fem = false;
    params.use_sim = false;
    params.msc = msno::make_msc_params(2, 8, rng);
    params.merge_w = Var(kaiming_conv(8, 8, 1, rng), true);
    params.merge_b = Var(Tensor::matrix(1, 8), true);
    Tensor z = rand_tensor(1, 8, 5, 5, rng);
    autodiff::NoGradGuard ng;
    Tensor out = msno::msno_forward(cv(z), params).value();
    CHECK(out.c() == 8);
    CHECK(out.all_finite());
}

TEST_CASE("msno_forward is bitwise deterministic") {
    Rng rng(68);
    msno::MsnoParams params;
    std::array<int, 8> strides;
    strides.fill(1);
    params.fem = msno::make_fem_params(strides);
    params.msc = msno::make_msc_params(4, 8, rng);
    params.sim = msno::make_sim_params(4, 8, rng);
    Tensor z = rand_tensor(1, 8, 9, 9, rng);
    autodiff::NoGradGuard ng;
    Tensor a = msno::msno_forward(cv(z), params).value();
    Tensor b = msno::msno_forward(cv(z), params).value();
    CHECK(max_abs_diff(a, b) == 0.0);
}
