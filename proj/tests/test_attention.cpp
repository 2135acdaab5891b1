#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbc/attention.hpp"
#include "fbc/bench.hpp"
#include "fbc/gradcheck.hpp"
#include "oracles.hpp"

using fbc::AttentionConfig;
using fbc::AttentionKind;
using fbc::Shape;
using D = double;

namespace {

AttentionConfig fbca_cfg(std::int64_t channels, std::int64_t k = 3, std::int64_t ratio = 4,
                         fbc::InitMode init = fbc::InitMode::He) {
    AttentionConfig cfg;
    cfg.kind = AttentionKind::Fbca;
    cfg.channels = channels;
    cfg.fbca_kernel = k;
    cfg.ratio = fbc::fit_ratio(channels, ratio);
    cfg.init = init;
    return cfg;
}

// Copies gate parameters so fore and back branches are identical.
void make_gates_equal(fbc::FbcaState<D>& state) {
    state.back_gate().w1()->data = state.fore_gate().w1()->data;
    state.back_gate().b1()->data = state.fore_gate().b1()->data;
    state.back_gate().w2()->data = state.fore_gate().w2()->data;
    state.back_gate().b2()->data = state.fore_gate().b2()->data;
}

}  // namespace

TEST_CASE("zeroed CBLR gives map 0.5 and splits spatial sums in half") {
    fbc::RngStream rng(5);
    auto state = fbc::FbcaState<D>(fbca_cfg(3, 3, 1, fbc::InitMode::Zero), rng);
    auto x = fbc::randn<D>(Shape{2, 3, 4, 4}, rng, 1.0);
    auto inter = state.embed(x, false);

    for (const double v : inter.map_fore->data) {
        CHECK(v == 0.5);
    }
    for (std::int64_t n = 0; n < 2; ++n) {
        for (std::int64_t c = 0; c < 3; ++c) {
            double spatial_sum = 0.0;
            for (std::int64_t p = 0; p < 16; ++p) {
                spatial_sum += x->data[static_cast<std::size_t>((n * 3 + c) * 16 + p)];
            }
            const auto i = static_cast<std::size_t>(n * 3 + c);
            CHECK(inter.v_fore->data[i] == doctest::Approx(0.5 * spatial_sum).epsilon(1e-12));
            CHECK(inter.v_back->data[i] == doctest::Approx(0.5 * spatial_sum).epsilon(1e-12));
        }
    }
}

TEST_CASE("all-ones map sends everything to the foreground vector") {
    fbc::RngStream rng(7);
    auto state = fbc::FbcaState<D>(fbca_cfg(3), rng);
    auto x = fbc::randn<D>(Shape{1, 3, 4, 4}, rng, 1.0);
    auto inter = state.embed_from_map(x, fbc::ones<D>(Shape{1, 1, 4, 4}));
    for (std::int64_t c = 0; c < 3; ++c) {
        double spatial_sum = 0.0;
        for (std::int64_t p = 0; p < 16; ++p) {
            spatial_sum += x->data[static_cast<std::size_t>(c * 16 + p)];
        }
        CHECK(inter.v_fore->data[static_cast<std::size_t>(c)] ==
              doctest::Approx(spatial_sum).epsilon(1e-12));
        CHECK(inter.v_back->data[static_cast<std::size_t>(c)] == 0.0);
    }
}

TEST_CASE("complementarity: map_fore + map_back is exactly one") {
    fbc::RngStream rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto state = fbc::FbcaState<D>(fbca_cfg(4, 5), rng);
        auto x = fbc::randn<D>(Shape{2, 4, 5, 5}, rng, 2.0);
        auto inter = state.embed(x, false);
        for (std::size_t i = 0; i < inter.map_fore->data.size(); ++i) {
            CHECK(inter.map_fore->data[i] + inter.map_back->data[i] == 1.0);
        }
    }
}

TEST_CASE("sum rule: v_fore + v_back equals per-channel spatial sums") {
    fbc::RngStream rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        auto state = fbc::FbcaState<D>(fbca_cfg(5, 3), rng);
        auto x = fbc::randn<D>(Shape{2, 5, 4, 6}, rng, 1.5);
        auto inter = state.embed(x, false);
        for (std::int64_t n = 0; n < 2; ++n) {
            for (std::int64_t c = 0; c < 5; ++c) {
                double spatial_sum = 0.0;
                for (std::int64_t p = 0; p < 24; ++p) {
                    spatial_sum += x->data[static_cast<std::size_t>((n * 5 + c) * 24 + p)];
                }
                const auto i = static_cast<std::size_t>(n * 5 + c);
                const double got = inter.v_fore->data[i] + inter.v_back->data[i];
                const double rel =
                    std::abs(got - spatial_sum) / std::max(1e-10, std::abs(spatial_sum));
                CHECK(rel <= 1e-9);
            }
        }
    }
}

TEST_CASE("embedding vectors match the scalar loop oracle to 1e-12") {
    fbc::RngStream rng(17);
    auto state = fbc::FbcaState<D>(fbca_cfg(3, 3, 1), rng);
    auto x = fbc::randn<D>(Shape{1, 3, 4, 4}, rng, 1.0);
    auto inter = state.embed(x, false);
    const auto vf = oracle::weighted_sum_naive(x->data, 3, 4, 4, inter.map_fore->data);
    const auto vb = oracle::weighted_sum_naive(x->data, 3, 4, 4, inter.map_back->data);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(inter.v_fore->data[i] - vf[i]) <= 1e-12);
        CHECK(std::abs(inter.v_back->data[i] - vb[i]) <= 1e-12);
    }
}

TEST_CASE("embedding equals the flatten/matmul composition route") {
    fbc::RngStream rng(19);
    auto state = fbc::FbcaState<D>(fbca_cfg(4, 3), rng);
    auto x = fbc::randn<D>(Shape{1, 4, 3, 5}, rng, 1.0);
    auto inter = state.embed(x, false);
    // v = map (1xHW) x F^T (HWxC) spelled out with the generic ops.
    auto map_row = fbc::reshape(inter.map_fore, Shape{1, 15});
    auto f_mat = fbc::reshape(x, Shape{4, 15});
    // transpose by hand
    std::vector<double> ft(15 * 4);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 15; ++c) {
            ft[static_cast<std::size_t>(c * 4 + r)] = f_mat->data[static_cast<std::size_t>(r * 15 + c)];
        }
    }
    auto v = fbc::matmul(map_row, fbc::make_tensor<D>(Shape{15, 4}, ft));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(inter.v_fore->data[i] == doctest::Approx(v->data[i]).epsilon(1e-12));
    }
}

TEST_CASE("zeroed gates produce c = 0.5 and d_w = 0") {
    fbc::RngStream rng(23);
    auto state = fbc::FbcaState<D>(fbca_cfg(4, 3, 2, fbc::InitMode::Zero), rng);
    auto x = fbc::randn<D>(Shape{1, 4, 4, 4}, rng, 1.0);
    auto inter = state.embed(x, false);
    state.contrast(inter);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(inter.c_fore->data[i] == 0.5);
        CHECK(inter.c_back->data[i] == 0.5);
        CHECK(inter.d_w->data[i] == 0.0);
    }
}

TEST_CASE("identical gates with v_fore == v_back give d_w == 0 exactly") {
    fbc::RngStream rng(29);
    auto state = fbc::FbcaState<D>(fbca_cfg(4, 3, 2, fbc::InitMode::Zero), rng);
    fbc::RngStream wrng(31);
    state.fore_gate().w1()->data = fbc::randn<D>(Shape{2, 4}, wrng, 1.0)->data;
    state.fore_gate().w2()->data = fbc::randn<D>(Shape{4, 2}, wrng, 1.0)->data;
    make_gates_equal(state);

    auto x = fbc::randn<D>(Shape{2, 4, 5, 5}, rng, 1.0);
    // Zeroed CBLR -> map == 0.5 -> v_fore == v_back bitwise.
    auto out = state.forward(x, false);
    for (const double v : out->data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("contrast stage matches the hand-rolled MLP oracle (C=4, r=2)") {
    fbc::RngStream rng(37);
    auto state = fbc::FbcaState<D>(fbca_cfg(4, 3, 2), rng);
    auto x = fbc::randn<D>(Shape{1, 4, 3, 3}, rng, 1.0);
    auto inter = state.embed(x, false);
    state.contrast(inter);

    const auto& fg = state.fore_gate();
    const auto& bg = state.back_gate();
    std::vector<double> vf(inter.v_fore->data.begin(), inter.v_fore->data.end());
    std::vector<double> vb(inter.v_back->data.begin(), inter.v_back->data.end());
    const auto cf = oracle::mlp_gate_naive(vf, 4, 2, fg.w1()->data, fg.b1()->data, fg.w2()->data,
                                           fg.b2()->data, 0.1);
    const auto cb = oracle::mlp_gate_naive(vb, 4, 2, bg.w1()->data, bg.b1()->data, bg.w2()->data,
                                           bg.b2()->data, 0.1);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(inter.c_fore->data[i] - cf[i]) <= 1e-12);
        CHECK(std::abs(inter.c_back->data[i] - cb[i]) <= 1e-12);
        CHECK(std::abs(inter.d_w->data[i] - (cf[i] - cb[i])) <= 1e-12);
    }
}

TEST_CASE("gate outputs stay in (0,1) and d_w in (-1,1) under fuzzing") {
    fbc::RngStream rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t c = 2 + static_cast<std::int64_t>(rng.below(7));
        auto state = fbc::FbcaState<D>(fbca_cfg(c, rng.uniform() < 0.5 ? 3 : 5), rng);
        auto x = fbc::randn<D>(Shape{1, c, 4, 4}, rng, rng.uniform(0.2, 3.0));
        fbc::FbcaIntermediates<D> inter;
        state.forward(x, false, &inter);
        for (std::size_t i = 0; i < inter.d_w->data.size(); ++i) {
            CHECK(inter.c_fore->data[i] > 0.0);
            CHECK(inter.c_fore->data[i] < 1.0);
            CHECK(inter.c_back->data[i] > 0.0);
            CHECK(inter.c_back->data[i] < 1.0);
            CHECK(inter.d_w->data[i] > -1.0);
            CHECK(inter.d_w->data[i] < 1.0);
        }
    }
}

TEST_CASE("without background the block is a plain gated attention over v_fore") {
    fbc::RngStream rng(43);
    auto cfg = fbca_cfg(4, 3, 2, fbc::InitMode::Zero);
    cfg.include_background = false;
    auto state = fbc::FbcaState<D>(cfg, rng);
    auto x = fbc::randn<D>(Shape{1, 4, 4, 4}, rng, 1.0);
    fbc::FbcaIntermediates<D> inter;
    auto out = state.forward(x, false, &inter);
    // Zero gates -> c_fore = 0.5 -> F' = 0.5 * F, no background subtraction.
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(inter.d_w->data[i] == 0.5);
    }
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        CHECK(out->data[i] == 0.5 * x->data[i]);
    }
}

TEST_CASE("forward equals composing embed and contrast stages") {
    fbc::RngStream rng(47);
    auto state = fbc::FbcaState<D>(fbca_cfg(8, 5), rng);
    auto x = fbc::randn<D>(Shape{1, 8, 5, 5}, rng, 1.0);
    auto out = state.forward(x, false);

    auto inter = state.embed(x, false);
    state.contrast(inter);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const std::size_t nc = i / 25;
        CHECK(out->data[i] == x->data[i] * inter.d_w->data[nc]);
    }
}

TEST_CASE("full FBCA block passes gradcheck at tol 1e-4 (C=8, H=W=5)") {
    fbc::RngStream rng(53);
    auto state = std::make_shared<fbc::FbcaState<D>>(fbca_cfg(8, 3), rng);
    auto x = fbc::randn<D>(Shape{1, 8, 5, 5}, rng, 1.0, true);
    auto r = fbc::uniform<D>(Shape{1, 8, 5, 5}, rng, -1.0, 1.0);
    fbc::ParamList<D> leaves;
    state->collect("fbca", leaves);
    leaves.erase(std::remove_if(leaves.begin(), leaves.end(),
                                [](const auto& p) { return p.is_buffer; }),
                 leaves.end());
    leaves.push_back({"x", x});
    auto report = fbc::gradcheck(
        [&]() { return fbc::sum(fbc::mul(state->forward(x, false), r)); }, leaves, 1e-5);
    CHECK(report.pass(1e-4));
}

TEST_CASE("channel permutation equivariance") {
    fbc::RngStream rng(59);
    const std::int64_t c = 6;
    auto cfg = fbca_cfg(c, 3, 2);
    auto state = fbc::FbcaState<D>(cfg, rng);
    auto x = fbc::randn<D>(Shape{1, c, 4, 4}, rng, 1.0);

    // permutation and its application
    std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};
    auto permuted_x = fbc::zeros<D>(Shape{1, c, 4, 4});
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t p = 0; p < 16; ++p) {
            permuted_x->data[static_cast<std::size_t>(ci * 16 + p)] =
                x->data[static_cast<std::size_t>(perm[static_cast<std::size_t>(ci)] * 16 + p)];
        }
    }

    fbc::RngStream rng2(59);
    auto state2 = fbc::FbcaState<D>(cfg, rng2);  // same params as state
    // conv input-channel axis
    auto& k2 = state2.cblr().kernel()->data;
    const auto& k1 = state.cblr().kernel()->data;
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t p = 0; p < 9; ++p) {
            k2[static_cast<std::size_t>(ci * 9 + p)] =
                k1[static_cast<std::size_t>(perm[static_cast<std::size_t>(ci)] * 9 + p)];
        }
    }
    // gate weight columns (w1) and rows (w2), and b2 entries
    auto permute_gate = [&](const fbc::MlpGate<D>& src, fbc::MlpGate<D>& dst) {
        const std::int64_t hidden = c / 2;
        for (std::int64_t hrow = 0; hrow < hidden; ++hrow) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                dst.w1()->data[static_cast<std::size_t>(hrow * c + ci)] =
                    src.w1()->data[static_cast<std::size_t>(
                        hrow * c + perm[static_cast<std::size_t>(ci)])];
            }
        }
        dst.b1()->data = src.b1()->data;
        for (std::int64_t ci = 0; ci < c; ++ci) {
            for (std::int64_t hcol = 0; hcol < hidden; ++hcol) {
                dst.w2()->data[static_cast<std::size_t>(ci * hidden + hcol)] =
                    src.w2()->data[static_cast<std::size_t>(
                        perm[static_cast<std::size_t>(ci)] * hidden + hcol)];
            }
        }
        for (std::int64_t ci = 0; ci < c; ++ci) {
            dst.b2()->data[static_cast<std::size_t>(ci)] =
                src.b2()->data[static_cast<std::size_t>(perm[static_cast<std::size_t>(ci)])];
        }
    };
    permute_gate(state.fore_gate(), state2.fore_gate());
    permute_gate(state.back_gate(), state2.back_gate());

    fbc::FbcaIntermediates<D> inter1;
    fbc::FbcaIntermediates<D> inter2;
    auto out1 = state.forward(x, false, &inter1);
    auto out2 = state2.forward(permuted_x, false, &inter2);

    for (std::int64_t ci = 0; ci < c; ++ci) {
        const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(ci)]);
        CHECK(std::abs(inter2.d_w->data[static_cast<std::size_t>(ci)] - inter1.d_w->data[src]) <=
              1e-12);
        for (std::int64_t p = 0; p < 16; ++p) {
            CHECK(std::abs(out2->data[static_cast<std::size_t>(ci * 16 + p)] -
                           out1->data[src * 16 + static_cast<std::size_t>(p)]) <= 1e-12);
        }
    }
}

TEST_CASE("SE with zero weights halves the input") {
    fbc::RngStream rng(61);
    AttentionConfig cfg;
    cfg.kind = AttentionKind::Se;
    cfg.channels = 4;
    cfg.ratio = 2;
    cfg.init = fbc::InitMode::Zero;
    fbc::AttentionBlock<D> block(cfg, rng);
    auto x = fbc::randn<D>(Shape{2, 4, 3, 3}, rng, 1.0);
    auto y = block.forward(x, false);
    for (std::size_t i = 0; i < y->data.size(); ++i) {
        CHECK(y->data[i] == 0.5 * x->data[i]);
    }
}

TEST_CASE("ECA gate on constant-per-channel input matches the conv1d oracle") {
    fbc::RngStream rng(67);
    AttentionConfig cfg;
    cfg.kind = AttentionKind::Eca;
    cfg.channels = 6;
    cfg.eca_kernel = 3;
    fbc::EcaState<D> state(cfg, rng);

    std::vector<double> means{0.3, -1.2, 0.8, 2.0, -0.4, 0.1};
    auto x = fbc::zeros<D>(Shape{1, 6, 2, 2});
    for (std::int64_t c = 0; c < 6; ++c) {
        for (std::int64_t p = 0; p < 4; ++p) {
            x->data[static_cast<std::size_t>(c * 4 + p)] = means[static_cast<std::size_t>(c)];
        }
    }
    auto y = state.forward(x, false);
    const auto conv = oracle::conv1d_naive(means, 6, state.kernel()->data);
    for (std::int64_t c = 0; c < 6; ++c) {
        const double gate = 1.0 / (1.0 + std::exp(-conv[static_cast<std::size_t>(c)]));
        for (std::int64_t p = 0; p < 4; ++p) {
            CHECK(y->data[static_cast<std::size_t>(c * 4 + p)] ==
                  doctest::Approx(means[static_cast<std::size_t>(c)] * gate).epsilon(1e-12));
        }
    }
}

TEST_CASE("Coordinate attention on 1x1 input degenerates to a per-channel gate") {
    fbc::RngStream rng(71);
    AttentionConfig cfg;
    cfg.kind = AttentionKind::Coord;
    cfg.channels = 4;
    cfg.ratio = 2;
    fbc::CoordState<D> state(cfg, rng);

    auto x = fbc::randn<D>(Shape{1, 4, 1, 1}, rng, 1.0);
    auto y = state.forward(x, false);

    // Hand loop: both pooled sequences equal x itself; the stem then the two
    // heads act per channel vector.
    fbc::ParamList<D> params;
    state.collect("coord", params);
    auto find = [&](const std::string& name) -> const std::vector<double>& {
        for (const auto& p : params) {
            if (p.name == "coord." + name) {
                return p.tensor->data;
            }
        }
        throw std::runtime_error("missing " + name);
    };
    const auto& stem_w = find("stem_w");
    const auto& stem_b = find("stem_b");
    const auto& hh_w = find("head_h_w");
    const auto& hh_b = find("head_h_b");
    const auto& hw_w = find("head_w_w");
    const auto& hw_b = find("head_w_b");

    std::vector<double> mid(2);
    for (int i = 0; i < 2; ++i) {
        double acc = stem_b[static_cast<std::size_t>(i)];
        for (int j = 0; j < 4; ++j) {
            acc += stem_w[static_cast<std::size_t>(i * 4 + j)] * x->data[static_cast<std::size_t>(j)];
        }
        mid[static_cast<std::size_t>(i)] = acc > 0 ? acc : 0.1 * acc;
    }
    for (int c = 0; c < 4; ++c) {
        double ah = hh_b[static_cast<std::size_t>(c)];
        double aw = hw_b[static_cast<std::size_t>(c)];
        for (int j = 0; j < 2; ++j) {
            ah += hh_w[static_cast<std::size_t>(c * 2 + j)] * mid[static_cast<std::size_t>(j)];
            aw += hw_w[static_cast<std::size_t>(c * 2 + j)] * mid[static_cast<std::size_t>(j)];
        }
        ah = 1.0 / (1.0 + std::exp(-ah));
        aw = 1.0 / (1.0 + std::exp(-aw));
        CHECK(y->data[static_cast<std::size_t>(c)] ==
              doctest::Approx(x->data[static_cast<std::size_t>(c)] * ah * aw).epsilon(1e-12));
    }
}

TEST_CASE("param_count formulas match serialized-array enumeration") {
    fbc::RngStream rng(73);
    for (const auto kind : {AttentionKind::None, AttentionKind::Se, AttentionKind::Eca,
                            AttentionKind::Coord, AttentionKind::Fbca}) {
        for (int trial = 0; trial < 8; ++trial) {
            AttentionConfig cfg;
            cfg.kind = kind;
            cfg.channels = 4 * (1 + static_cast<std::int64_t>(rng.below(16)));
            cfg.fbca_kernel = 1 + 2 * static_cast<std::int64_t>(rng.below(4));
            cfg.ratio = fbc::fit_ratio(cfg.channels, 1 + static_cast<std::int64_t>(rng.below(16)));
            cfg.eca_kernel = 1 + 2 * static_cast<std::int64_t>(rng.below(3));
            cfg.bias = rng.uniform() < 0.7;
            fbc::AttentionBlock<D> block(cfg, rng);
            fbc::ParamList<D> params;
            block.collect("b", params);
            CHECK(block.param_count() == fbc::learnable_count(params));
            CHECK(block.param_count() == fbc::attention_param_count(cfg));
        }
    }
}

TEST_CASE("param_count reference values: SE 580, ECA 3, FBCA closed form") {
    fbc::RngStream rng(79);
    AttentionConfig se;
    se.kind = AttentionKind::Se;
    se.channels = 64;
    se.ratio = 16;
    CHECK(fbc::attention_param_count(se) == 580);  // 2*(64*4) + 4 + 64

    AttentionConfig eca;
    eca.kind = AttentionKind::Eca;
    eca.channels = 64;
    eca.eca_kernel = 3;
    CHECK(fbc::attention_param_count(eca) == 3);

    AttentionConfig fb;
    fb.kind = AttentionKind::Fbca;
    fb.channels = 64;
    fb.fbca_kernel = 5;
    fb.ratio = 16;
    // conv 25*64 + bias 1 + bn affine 2 + two gates (64*4+4 + 4*64+64 each)
    CHECK(fbc::attention_param_count(fb) == 25 * 64 + 1 + 2 + 2 * (64 * 4 + 4 + 4 * 64 + 64));
    fbc::AttentionBlock<D> block(fb, rng);
    fbc::ParamList<D> params;
    block.collect("b", params);
    CHECK(fbc::learnable_count(params) == fbc::attention_param_count(fb));
}

TEST_CASE("instrumented MAC counter agrees with the analytic FBCA cost") {
    fbc::RngStream rng(83);
    AttentionConfig cfg = fbca_cfg(8, 5, 4);
    fbc::FbcaState<D> state(cfg, rng);
    auto x = fbc::randn<D>(Shape{1, 8, 6, 6}, rng, 1.0);
    fbc::NoGradGuard no_grad;
    fbc::MacCountScope scope;
    state.forward(x, false);
    CHECK(scope.value() == fbc::attention_macs(cfg, 6, 6));
}

TEST_CASE("instrumented MAC counter agrees for SE, ECA and Coord") {
    fbc::RngStream rng(89);
    fbc::NoGradGuard no_grad;
    for (const auto kind : {AttentionKind::Se, AttentionKind::Eca, AttentionKind::Coord}) {
        AttentionConfig cfg;
        cfg.kind = kind;
        cfg.channels = 8;
        cfg.ratio = 4;
        fbc::AttentionBlock<D> block(cfg, rng);
        auto x = fbc::randn<D>(Shape{1, 8, 5, 7}, rng, 1.0);
        fbc::MacCountScope scope;
        block.forward(x, false);
        CHECK(scope.value() == fbc::attention_macs(cfg, 5, 7));
    }
}
