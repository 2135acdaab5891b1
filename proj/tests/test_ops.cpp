#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbc/nn_ops.hpp"
#include "oracles.hpp"

using fbc::Shape;
using D = double;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 input and kernel, center element sums to 9") {
    auto x = fbc::ones<D>(Shape{1, 1, 3, 3});
    auto k = fbc::ones<D>(Shape{1, 1, 3, 3});
    auto y = fbc::conv2d<D>(x, k, nullptr, 1, 1);
    REQUIRE(y->shape == Shape{1, 1, 3, 3});
    CHECK(y->data[4] == 9.0);   // center: full overlap
    CHECK(y->data[0] == 4.0);   // corner: 2x2 overlap
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
    fbc::RngStream rng(5);
    auto x = fbc::randn<D>(Shape{2, 1, 4, 4}, rng, 1.0);
    auto k = fbc::ones<D>(Shape{1, 1, 1, 1});
    auto b = fbc::zeros<D>(Shape{1});
    auto y = fbc::conv2d(x, k, b, 1, 0);
    CHECK(y->data == x->data);
}

TEST_CASE("conv2d matches the naive loop oracle to 1e-12") {
    fbc::RngStream rng(7);
    auto x = fbc::randn<D>(Shape{2, 3, 5, 5}, rng, 1.0);
    auto k = fbc::randn<D>(Shape{4, 3, 3, 3}, rng, 1.0);
    auto b = fbc::randn<D>(Shape{4}, rng, 1.0);

    for (const auto& [stride, pad] : std::vector<std::pair<std::int64_t, std::int64_t>>{
             {1, 1}, {1, 0}, {2, 1}, {1, 2}}) {
        auto y = fbc::conv2d(x, k, b, stride, pad);
        const auto expect =
            oracle::conv2d_naive(x->data, 2, 3, 5, 5, k->data, 4, 3, 3, b ? &b->data : nullptr,
                                 stride, pad);
        CHECK(max_abs_diff(y->data, expect) <= 1e-12);
    }
}

TEST_CASE("conv2d on larger random instances matches the oracle") {
    fbc::RngStream rng(13);
    auto x = fbc::randn<D>(Shape{2, 8, 16, 16}, rng, 1.0);
    auto k = fbc::randn<D>(Shape{8, 8, 5, 5}, rng, 0.2);
    auto y = fbc::conv2d<D>(x, k, nullptr, 1, 2);
    const auto expect = oracle::conv2d_naive(x->data, 2, 8, 16, 16, k->data, 8, 5, 5, nullptr, 1, 2);
    CHECK(max_abs_diff(y->data, expect) <= 1e-12);
}

TEST_CASE("direct conv and the im2col route agree to 1e-10") {
    fbc::RngStream rng(17);
    auto x = fbc::randn<D>(Shape{2, 4, 7, 7}, rng, 1.0);
    auto k = fbc::randn<D>(Shape{5, 4, 3, 3}, rng, 0.5);
    auto b = fbc::randn<D>(Shape{5}, rng, 0.5);
    for (const auto& [stride, pad] :
         std::vector<std::pair<std::int64_t, std::int64_t>>{{1, 1}, {2, 1}}) {
        auto direct = fbc::conv2d(x, k, b, stride, pad);
        const auto cols = fbc::conv2d_im2col_forward(*x, *k, b.get(), stride, pad);
        CHECK(max_abs_diff(direct->data, cols) <= 1e-10);
    }
}

TEST_CASE("conv2d stride-2 halves even extents") {
    auto x = fbc::zeros<D>(Shape{1, 2, 8, 8});
    auto k = fbc::zeros<D>(Shape{3, 2, 3, 3});
    auto y = fbc::conv2d<D>(x, k, nullptr, 2, 1);
    CHECK(y->shape == Shape{1, 3, 4, 4});
}

TEST_CASE("conv2d rejects empty outputs and bad shapes") {
    auto x = fbc::zeros<D>(Shape{1, 2, 2, 2});
    auto k = fbc::zeros<D>(Shape{1, 2, 5, 5});
    CHECK_THROWS_AS(fbc::conv2d<D>(x, k, nullptr, 1, 0), fbc::ShapeError);
    auto k2 = fbc::zeros<D>(Shape{1, 3, 1, 1});
    CHECK_THROWS_AS(fbc::conv2d<D>(x, k2, nullptr, 1, 0), fbc::ShapeError);
}

TEST_CASE("matmul matches the double-loop oracle to 1e-12") {
    fbc::RngStream rng(19);
    const std::int64_t hw = 12;
    const std::int64_t c = 7;
    auto a = fbc::randn<D>(Shape{1, hw}, rng, 1.0);
    auto b = fbc::randn<D>(Shape{hw, c}, rng, 1.0);
    auto y = fbc::matmul(a, b);
    CHECK(max_abs_diff(y->data, oracle::matmul_naive(a->data, 1, hw, b->data, c)) <= 1e-12);

    auto a2 = fbc::randn<D>(Shape{6, 9}, rng, 1.0);
    auto b2 = fbc::randn<D>(Shape{9, 5}, rng, 1.0);
    CHECK(max_abs_diff(fbc::matmul(a2, b2)->data,
                       oracle::matmul_naive(a2->data, 6, 9, b2->data, 5)) <= 1e-12);
}

TEST_CASE("linear matches the loop oracle to 1e-12") {
    fbc::RngStream rng(23);
    auto x = fbc::randn<D>(Shape{3, 6}, rng, 1.0);
    auto w = fbc::randn<D>(Shape{4, 6}, rng, 1.0);
    auto b = fbc::randn<D>(Shape{4}, rng, 1.0);
    auto y = fbc::linear(x, w, b);
    CHECK(max_abs_diff(y->data, oracle::linear_naive(x->data, 3, 6, w->data, 4, &b->data)) <=
          1e-12);
}

TEST_CASE("batch_norm training on constant channels returns beta") {
    auto x = fbc::full<D>(Shape{2, 2, 3, 3}, 7.5);
    auto gamma = fbc::full<D>(Shape{2}, 3.0, true);
    auto beta = fbc::make_tensor<D>(Shape{2}, {0.25, -1.5}, true);
    auto rm = fbc::zeros<D>(Shape{2});
    auto rv = fbc::ones<D>(Shape{2});
    auto y = fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, true);
    for (std::int64_t n = 0; n < 2; ++n) {
        for (std::int64_t c = 0; c < 2; ++c) {
            for (std::int64_t p = 0; p < 9; ++p) {
                CHECK(y->data[static_cast<std::size_t>((n * 2 + c) * 9 + p)] ==
                      doctest::Approx(beta->data[static_cast<std::size_t>(c)]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batch_norm eval with unit running stats is near-identity") {
    fbc::RngStream rng(29);
    auto x = fbc::randn<D>(Shape{2, 3, 4, 4}, rng, 1.0);
    auto gamma = fbc::ones<D>(Shape{3}, true);
    auto beta = fbc::zeros<D>(Shape{3}, true);
    auto rm = fbc::zeros<D>(Shape{3});
    auto rv = fbc::ones<D>(Shape{3});
    auto y = fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, false);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        CHECK(y->data[i] == doctest::Approx(x->data[i]).epsilon(1e-4));
    }
}

TEST_CASE("batch_norm training output has mean 0 and variance 1 before affine") {
    fbc::RngStream rng(31);
    // Input variance well above eps so the normalized variance sits within
    // 1e-6 of one.
    auto x = fbc::randn<D>(Shape{4, 2, 3, 3}, rng, 5.0);
    auto gamma = fbc::ones<D>(Shape{2}, true);
    auto beta = fbc::zeros<D>(Shape{2}, true);
    auto rm = fbc::zeros<D>(Shape{2});
    auto rv = fbc::ones<D>(Shape{2});
    auto y = fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, true);

    std::vector<double> mean;
    std::vector<double> var;
    oracle::channel_stats(y->data, 4, 2, 3, 3, mean, var);
    for (const double m : mean) {
        CHECK(std::abs(m) <= 1e-10);
    }
    for (const double v : var) {
        CHECK(std::abs(v - 1.0) <= 1e-6);
    }
}

TEST_CASE("batch_norm training updates running statistics by momentum") {
    fbc::RngStream rng(37);
    auto x = fbc::randn<D>(Shape{4, 2, 3, 3}, rng, 2.0);
    auto gamma = fbc::ones<D>(Shape{2}, true);
    auto beta = fbc::zeros<D>(Shape{2}, true);
    auto rm = fbc::zeros<D>(Shape{2});
    auto rv = fbc::ones<D>(Shape{2});
    fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, true);

    std::vector<double> mean;
    std::vector<double> var;
    oracle::channel_stats(x->data, 4, 2, 3, 3, mean, var);
    for (std::int64_t c = 0; c < 2; ++c) {
        CHECK(rm->data[static_cast<std::size_t>(c)] ==
              doctest::Approx(0.03 * mean[static_cast<std::size_t>(c)]).epsilon(1e-12));
        CHECK(rv->data[static_cast<std::size_t>(c)] ==
              doctest::Approx(0.97 + 0.03 * var[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm training needs at least two values per channel") {
    auto x = fbc::ones<D>(Shape{1, 2, 1, 1});
    auto gamma = fbc::ones<D>(Shape{2}, true);
    auto beta = fbc::zeros<D>(Shape{2}, true);
    auto rm = fbc::zeros<D>(Shape{2});
    auto rv = fbc::ones<D>(Shape{2});
    CHECK_THROWS_AS(fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, true), fbc::ShapeError);
    CHECK_NOTHROW(fbc::batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, false));
}

TEST_CASE("leaky_relu and sigmoid match their defining values") {
    auto x = fbc::make_tensor<D>(Shape{3}, {-1.0, 0.0, 2.0});
    auto y = fbc::leaky_relu(x, 0.1);
    CHECK(y->data[0] == -0.1);
    CHECK(y->data[1] == 0.0);
    CHECK(y->data[2] == 2.0);
    auto s = fbc::sigmoid(fbc::zeros<D>(Shape{1}));
    CHECK(s->data[0] == 0.5);
}

TEST_CASE("nearest_upsample2x block-replicates [[1,2],[3,4]]") {
    auto x = fbc::make_tensor<D>(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = fbc::nearest_upsample2x(x);
    const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    CHECK(y->data == expect);
}

TEST_CASE("nearest_upsample2x matches the index-map oracle on random input") {
    fbc::RngStream rng(41);
    auto x = fbc::randn<D>(Shape{2, 3, 4, 5}, rng, 1.0);
    auto y = fbc::nearest_upsample2x(x);
    for (std::int64_t n = 0; n < 2; ++n) {
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t r = 0; r < 8; ++r) {
                for (std::int64_t q = 0; q < 10; ++q) {
                    const double got =
                        y->data[static_cast<std::size_t>(((n * 3 + c) * 8 + r) * 10 + q)];
                    const double want =
                        x->data[static_cast<std::size_t>(((n * 3 + c) * 4 + r / 2) * 5 + q / 2)];
                    CHECK(got == want);
                }
            }
        }
    }
}

TEST_CASE("global_avg_pool averages spatial positions") {
    auto x = fbc::make_tensor<D>(Shape{1, 2, 1, 2}, {1.0, 3.0, -2.0, 6.0});
    auto y = fbc::global_avg_pool(x);
    CHECK(y->data[0] == 2.0);
    CHECK(y->data[1] == 2.0);
}

TEST_CASE("spatial_weighted_sum matches the triple-loop oracle") {
    fbc::RngStream rng(43);
    auto x = fbc::randn<D>(Shape{1, 3, 4, 4}, rng, 1.0);
    auto m = fbc::uniform<D>(Shape{1, 1, 4, 4}, rng, 0.0, 1.0);
    auto v = fbc::spatial_weighted_sum(x, m);
    const auto expect = oracle::weighted_sum_naive(x->data, 3, 4, 4, m->data);
    CHECK(max_abs_diff(v->data, expect) <= 1e-12);
}

TEST_CASE("conv1d_channels matches the loop oracle") {
    fbc::RngStream rng(47);
    auto v = fbc::randn<D>(Shape{1, 8}, rng, 1.0);
    auto k = fbc::randn<D>(Shape{3}, rng, 1.0);
    auto y = fbc::conv1d_channels(v, k);
    CHECK(max_abs_diff(y->data, oracle::conv1d_naive(v->data, 8, k->data)) <= 1e-12);
    auto k5 = fbc::randn<D>(Shape{5}, rng, 1.0);
    CHECK(max_abs_diff(fbc::conv1d_channels(v, k5)->data,
                       oracle::conv1d_naive(v->data, 8, k5->data)) <= 1e-12);
}

TEST_CASE("scale_channels applies one scalar per (sample, channel)") {
    auto x = fbc::ones<D>(Shape{2, 2, 2, 2});
    auto s = fbc::make_tensor<D>(Shape{2, 2}, {2.0, -1.0, 0.5, 3.0});
    auto y = fbc::scale_channels(x, s);
    CHECK(y->data[0] == 2.0);
    CHECK(y->data[4] == -1.0);
    CHECK(y->data[8] == 0.5);
    CHECK(y->data[12] == 3.0);
}

TEST_CASE("axis pools average the right axis") {
    auto x = fbc::make_tensor<D>(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    auto ph = fbc::pool_width(x);   // mean over W -> [N,C,H]
    CHECK(ph->data == std::vector<double>{2.0, 5.0});
    auto pw = fbc::pool_height(x);  // mean over H -> [N,C,W]
    CHECK(pw->data == std::vector<double>{2.5, 3.5, 4.5});
}

TEST_CASE("mean and sum reduce to scalars") {
    auto x = fbc::make_tensor<D>(Shape{2, 2}, {1, 2, 3, 6});
    CHECK(fbc::sum(x)->item() == 12.0);
    CHECK(fbc::mean(x)->item() == 3.0);
}
