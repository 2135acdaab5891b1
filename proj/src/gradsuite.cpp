#include "fbc/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "fbc/blocks.hpp"
#include "fbc/head.hpp"

namespace fbc {

namespace {

using D = double;
using Fn = std::function<TensorPtr<D>()>;

// Fixed random projection turns any output into a scalar that exercises
// every element's gradient path.
TensorPtr<D> projection(const Shape& shape, RngStream& rng) {
    return uniform<D>(shape, rng, -1.0, 1.0);
}

TensorPtr<D> proj_loss(const TensorPtr<D>& y, const TensorPtr<D>& r) {
    return sum(mul(y, r));
}

void scale_gate_weights(FbcaState<D>& state, double factor) {
    for (auto* gate : {&state.fore_gate(), &state.back_gate()}) {
        for (auto& v : gate->w1()->data) {
            v *= factor;
        }
        for (auto& v : gate->w2()->data) {
            v *= factor;
        }
    }
}

struct Case {
    ParamList<D> leaves;
    Fn forward;
};

using CaseBuilder = std::function<Case(RngStream&)>;

Case ops_add_sub_mul(RngStream& rng) {
    Case c;
    auto a = randn<D>({2, 3}, rng, 1.0, true);
    auto b = randn<D>({2, 3}, rng, 1.0, true);
    auto x = randn<D>({2, 3}, rng, 1.0, true);
    auto r = projection({2, 3}, rng);
    c.leaves = {{"a", a}, {"b", b}, {"x", x}};
    c.forward = [=]() { return proj_loss(mul(sub(add(a, b), x), x), r); };
    return c;
}

Case ops_scalar(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 4}, rng, 1.0, true);
    auto r = projection({2, 4}, rng);
    c.leaves = {{"x", x}};
    c.forward = [=]() {
        return proj_loss(rsub_scalar(1.0, mul_scalar(add_scalar(x, 0.3), -1.7)), r);
    };
    return c;
}

Case ops_activations(RngStream& rng) {
    Case c;
    auto x = randn<D>({3, 4}, rng, 1.0, true);
    auto r = projection({3, 4}, rng);
    c.leaves = {{"x", x}};
    c.forward = [=]() { return proj_loss(sigmoid(leaky_relu(x, 0.1)), r); };
    return c;
}

Case ops_reductions(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 5}, rng, 1.0, true);
    c.leaves = {{"x", x}};
    c.forward = [=]() { return add(sum(sigmoid(x)), mean(mul(x, x))); };
    return c;
}

Case ops_reshape(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 2, 2}, rng, 1.0, true);
    auto r = projection({2, 12}, rng);
    c.leaves = {{"x", x}};
    c.forward = [=]() { return proj_loss(flatten(sigmoid(x)), r); };
    return c;
}

Case ops_matmul(RngStream& rng) {
    Case c;
    auto a = randn<D>({3, 4}, rng, 1.0, true);
    auto b = randn<D>({4, 2}, rng, 1.0, true);
    auto r = projection({3, 2}, rng);
    c.leaves = {{"a", a}, {"b", b}};
    c.forward = [=]() { return proj_loss(matmul(a, b), r); };
    return c;
}

Case ops_linear(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 5}, rng, 1.0, true);
    auto w = randn<D>({3, 5}, rng, 0.5, true);
    auto b = randn<D>({3}, rng, 0.5, true);
    auto r = projection({2, 3}, rng);
    c.leaves = {{"x", x}, {"w", w}, {"b", b}};
    c.forward = [=]() { return proj_loss(linear(x, w, b), r); };
    return c;
}

Case ops_conv2d_s1(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 5, 5}, rng, 1.0, true);
    auto w = randn<D>({4, 3, 3, 3}, rng, 0.4, true);
    auto b = randn<D>({4}, rng, 0.4, true);
    auto r = projection({2, 4, 5, 5}, rng);
    c.leaves = {{"x", x}, {"w", w}, {"b", b}};
    c.forward = [=]() { return proj_loss(conv2d(x, w, b, 1, 1), r); };
    return c;
}

Case ops_conv2d_s2(RngStream& rng) {
    Case c;
    auto x = randn<D>({1, 2, 6, 6}, rng, 1.0, true);
    auto w = randn<D>({3, 2, 3, 3}, rng, 0.4, true);
    auto b = randn<D>({3}, rng, 0.4, true);
    auto r = projection({1, 3, 3, 3}, rng);
    c.leaves = {{"x", x}, {"w", w}, {"b", b}};
    c.forward = [=]() { return proj_loss(conv2d(x, w, b, 2, 1), r); };
    return c;
}

Case ops_batch_norm_eval(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 4}, rng, 1.0, true);
    auto gamma = randn<D>({3}, rng, 0.5, true);
    auto beta = randn<D>({3}, rng, 0.5, true);
    auto rm = randn<D>({3}, rng, 0.3);
    auto rv = uniform<D>({3}, rng, 0.5, 2.0);
    auto r = projection({2, 3, 4, 4}, rng);
    c.leaves = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
    c.forward = [=]() {
        return proj_loss(batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, false), r);
    };
    return c;
}

Case ops_batch_norm_train(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 4}, rng, 1.0, true);
    auto gamma = randn<D>({3}, rng, 0.5, true);
    auto beta = randn<D>({3}, rng, 0.5, true);
    auto rm = zeros<D>({3});
    auto rv = ones<D>({3});
    auto r = projection({2, 3, 4, 4}, rng);
    c.leaves = {{"x", x}, {"gamma", gamma}, {"beta", beta}};
    // Training mode folds batch stats into the running buffers; reset them
    // every call so the forward stays a pure function of the leaves.
    c.forward = [=]() {
        std::fill(rm->data.begin(), rm->data.end(), 0.0);
        std::fill(rv->data.begin(), rv->data.end(), 1.0);
        return proj_loss(batch_norm2d(x, gamma, beta, rm, rv, 1e-5, 0.03, true), r);
    };
    return c;
}

Case ops_pool_upsample(RngStream& rng) {
    Case c;
    auto x = randn<D>({1, 2, 3, 3}, rng, 1.0, true);
    auto r1 = projection({1, 2}, rng);
    auto r2 = projection({1, 2, 6, 6}, rng);
    c.leaves = {{"x", x}};
    c.forward = [=]() {
        return add(proj_loss(global_avg_pool(x), r1), proj_loss(nearest_upsample2x(x), r2));
    };
    return c;
}

Case ops_concat_split(RngStream& rng) {
    Case c;
    auto a = randn<D>({2, 2, 3, 3}, rng, 1.0, true);
    auto b = randn<D>({2, 3, 3, 3}, rng, 1.0, true);
    auto r1 = projection({2, 2, 3, 3}, rng);
    auto r2 = projection({2, 3, 3, 3}, rng);
    c.leaves = {{"a", a}, {"b", b}};
    c.forward = [=]() {
        auto parts = split_channels(concat_channels<D>({a, b}), {2, 3});
        return add(proj_loss(sigmoid(parts[0]), r1), proj_loss(parts[1], r2));
    };
    return c;
}

Case ops_scale_channels(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 4}, rng, 1.0, true);
    auto s = randn<D>({2, 3}, rng, 1.0, true);
    auto r = projection({2, 3, 4, 4}, rng);
    c.leaves = {{"x", x}, {"s", s}};
    c.forward = [=]() { return proj_loss(scale_channels(x, s), r); };
    return c;
}

Case ops_weighted_sum(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 4}, rng, 1.0, true);
    auto m = uniform<D>({2, 1, 4, 4}, rng, 0.1, 0.9, true);
    auto r = projection({2, 3}, rng);
    c.leaves = {{"x", x}, {"map", m}};
    c.forward = [=]() { return proj_loss(spatial_weighted_sum(x, m), r); };
    return c;
}

Case ops_conv1d_channels(RngStream& rng) {
    Case c;
    auto v = randn<D>({2, 6}, rng, 1.0, true);
    auto k = randn<D>({3}, rng, 0.5, true);
    auto r = projection({2, 6}, rng);
    c.leaves = {{"v", v}, {"k", k}};
    c.forward = [=]() { return proj_loss(conv1d_channels(v, k), r); };
    return c;
}

Case ops_pointwise_conv1d(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 4, 5}, rng, 1.0, true);
    auto w = randn<D>({3, 4}, rng, 0.5, true);
    auto b = randn<D>({3}, rng, 0.5, true);
    auto r = projection({2, 3, 5}, rng);
    c.leaves = {{"x", x}, {"w", w}, {"b", b}};
    c.forward = [=]() { return proj_loss(pointwise_conv1d(x, w, b), r); };
    return c;
}

Case ops_axis_pools(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 5}, rng, 1.0, true);
    auto r1 = projection({2, 3, 4}, rng);
    auto r2 = projection({2, 3, 5}, rng);
    c.leaves = {{"x", x}};
    c.forward = [=]() {
        return add(proj_loss(pool_width(x), r1), proj_loss(pool_height(x), r2));
    };
    return c;
}

Case ops_length_ops(RngStream& rng) {
    Case c;
    auto a = randn<D>({2, 3, 4}, rng, 1.0, true);
    auto b = randn<D>({2, 3, 2}, rng, 1.0, true);
    auto r1 = projection({2, 3, 4}, rng);
    auto r2 = projection({2, 3, 2}, rng);
    c.leaves = {{"a", a}, {"b", b}};
    c.forward = [=]() {
        auto [ya, yb] = split_length(concat_length(a, b), 4);
        return add(proj_loss(sigmoid(ya), r1), proj_loss(yb, r2));
    };
    return c;
}

Case ops_axis_scales(RngStream& rng) {
    Case c;
    auto x = randn<D>({2, 3, 4, 5}, rng, 1.0, true);
    auto sh = randn<D>({2, 3, 4}, rng, 1.0, true);
    auto sw = randn<D>({2, 3, 5}, rng, 1.0, true);
    auto r = projection({2, 3, 4, 5}, rng);
    c.leaves = {{"x", x}, {"sh", sh}, {"sw", sw}};
    c.forward = [=]() { return proj_loss(scale_width(scale_height(x, sh), sw), r); };
    return c;
}

Case ops_losses(RngStream& rng) {
    Case c;
    auto logits = randn<D>({2, 8}, rng, 1.0, true);
    auto pred = randn<D>({2, 8}, rng, 1.0, true);
    std::vector<D> tdata(16);
    std::vector<D> mdata(16);
    for (std::size_t i = 0; i < 16; ++i) {
        tdata[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        mdata[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    auto targets = make_tensor<D>({2, 8}, tdata);
    auto box_t = randn<D>({2, 8}, rng, 1.0);
    auto mask = make_tensor<D>({2, 8}, mdata);
    c.leaves = {{"logits", logits}, {"pred", pred}};
    c.forward = [=]() {
        return add(bce_with_logits_mean(logits, targets), masked_l1_mean(pred, box_t, mask));
    };
    return c;
}

// Block inputs are kept at moderate scale: the pooled vectors are spatial
// sums, and saturated sigmoid gates have true gradients below what central
// differences at h=1e-5 can resolve.
Case fbca_case(std::int64_t channels, RngStream& rng) {
    Case c;
    AttentionConfig cfg;
    cfg.kind = AttentionKind::Fbca;
    cfg.channels = channels;
    cfg.fbca_kernel = 3;
    cfg.ratio = fit_ratio(channels, 4);
    auto state = std::make_shared<FbcaState<D>>(cfg, rng);
    scale_gate_weights(*state, 0.5);
    auto x = randn<D>({1, channels, 5, 5}, rng, 0.5, true);
    auto r = projection({1, channels, 5, 5}, rng);
    state->collect("fbca", c.leaves);
    c.leaves.erase(std::remove_if(c.leaves.begin(), c.leaves.end(),
                                  [](const auto& p) { return p.is_buffer; }),
                   c.leaves.end());
    c.leaves.push_back({"x", x});
    c.forward = [=]() { return proj_loss(state->forward(x, false), r); };
    return c;
}

Case fbcsp_case(RngStream& rng) {
    Case c;
    FbcspConfig cfg;
    cfg.c_in = 8;
    cfg.c_out = 8;
    cfg.n_bottlenecks = 1;
    cfg.ratio = 4;
    auto block = std::make_shared<Fbcsp<D>>(cfg, rng);
    scale_gate_weights(*block->attn1().fbca(), 0.5);
    scale_gate_weights(*block->attn3().fbca(), 0.5);
    auto x = randn<D>({1, 8, 6, 6}, rng, 0.3, true);
    auto r = projection({1, 8, 6, 6}, rng);
    block->collect("fbcsp", c.leaves);
    c.leaves.erase(std::remove_if(c.leaves.begin(), c.leaves.end(),
                                  [](const auto& p) { return p.is_buffer; }),
                   c.leaves.end());
    c.leaves.push_back({"x", x});
    c.forward = [=]() { return mul_scalar(proj_loss(block->forward(x, false), r), 0.1); };
    return c;
}

Case neck_case(RngStream& rng) {
    Case c;
    NeckConfig cfg;
    cfg.in_channels = {8, 8, 8};
    cfg.out_channels = {8, 8, 8};
    cfg.fuse.n_bottlenecks = 1;
    cfg.fuse.ratio = 4;
    auto neck = std::make_shared<Neck<D>>(cfg, rng);
    for (Fbcsp<D>* fuse : {&neck->fuse_p4(), &neck->fuse_p3(), &neck->fuse_n4(),
                           &neck->fuse_n5()}) {
        scale_gate_weights(*fuse->attn1().fbca(), 0.3);
        scale_gate_weights(*fuse->attn3().fbca(), 0.3);
    }
    auto f3 = randn<D>({1, 8, 8, 8}, rng, 0.3, true);
    auto f4 = randn<D>({1, 8, 4, 4}, rng, 0.3, true);
    auto f5 = randn<D>({1, 8, 2, 2}, rng, 0.3, true);
    auto r3 = projection({1, 8, 8, 8}, rng);
    auto r4 = projection({1, 8, 4, 4}, rng);
    auto r5 = projection({1, 8, 2, 2}, rng);
    neck->collect("neck", c.leaves);
    c.leaves.erase(std::remove_if(c.leaves.begin(), c.leaves.end(),
                                  [](const auto& p) { return p.is_buffer; }),
                   c.leaves.end());
    c.leaves.push_back({"f3", f3});
    c.leaves.push_back({"f4", f4});
    c.leaves.push_back({"f5", f5});
    // Scaled down so fd roundoff (proportional to the loss magnitude) stays
    // under the absolute floor.
    c.forward = [=]() {
        auto outs = neck->forward(f3, f4, f5, false);
        return mul_scalar(
            add(add(proj_loss(outs[0], r3), proj_loss(outs[1], r4)), proj_loss(outs[2], r5)),
            0.05);
    };
    return c;
}

Case head_case(RngStream& rng) {
    Case c;
    HeadConfig cfg;
    cfg.c_in = 8;
    auto head = std::make_shared<DetectHead<D>>(cfg, rng);
    auto x = randn<D>({1, 8, 4, 4}, rng, 1.0, true);
    std::vector<std::vector<Box>> gts{{Box{5, 6, 10, 14}, Box{20, 3, 8, 18}}};
    auto targets = std::make_shared<HeadTargets<D>>(build_head_targets<D>(gts, 4, 4, 8));
    head->collect("head", c.leaves);
    c.leaves.erase(std::remove_if(c.leaves.begin(), c.leaves.end(),
                                  [](const auto& p) { return p.is_buffer; }),
                   c.leaves.end());
    c.leaves.push_back({"x", x});
    c.forward = [=]() { return head_loss(head->forward(x, false), *targets, 1.0); };
    return c;
}

}  // namespace

std::vector<SuiteCheck> run_gradcheck_suite(const std::vector<std::string>& targets, int seeds,
                                            double h) {
    auto want = [&](const std::string& t) {
        return targets.empty() || std::find(targets.begin(), targets.end(), t) != targets.end();
    };

    std::vector<std::pair<std::string, CaseBuilder>> cases;
    if (want("ops")) {
        cases.emplace_back("ops.add_sub_mul", ops_add_sub_mul);
        cases.emplace_back("ops.scalar", ops_scalar);
        cases.emplace_back("ops.activations", ops_activations);
        cases.emplace_back("ops.reductions", ops_reductions);
        cases.emplace_back("ops.reshape", ops_reshape);
        cases.emplace_back("ops.matmul", ops_matmul);
        cases.emplace_back("ops.linear", ops_linear);
        cases.emplace_back("ops.conv2d_s1", ops_conv2d_s1);
        cases.emplace_back("ops.conv2d_s2", ops_conv2d_s2);
        cases.emplace_back("ops.batch_norm_eval", ops_batch_norm_eval);
        cases.emplace_back("ops.batch_norm_train", ops_batch_norm_train);
        cases.emplace_back("ops.pool_upsample", ops_pool_upsample);
        cases.emplace_back("ops.concat_split", ops_concat_split);
        cases.emplace_back("ops.scale_channels", ops_scale_channels);
        cases.emplace_back("ops.weighted_sum", ops_weighted_sum);
        cases.emplace_back("ops.conv1d_channels", ops_conv1d_channels);
        cases.emplace_back("ops.pointwise_conv1d", ops_pointwise_conv1d);
        cases.emplace_back("ops.axis_pools", ops_axis_pools);
        cases.emplace_back("ops.length_ops", ops_length_ops);
        cases.emplace_back("ops.axis_scales", ops_axis_scales);
        cases.emplace_back("ops.losses", ops_losses);
    }
    if (want("fbca")) {
        for (const std::int64_t c : {4, 8, 16}) {
            cases.emplace_back("fbca.c" + std::to_string(c),
                               [c](RngStream& rng) { return fbca_case(c, rng); });
        }
    }
    if (want("fbcsp")) {
        cases.emplace_back("fbcsp", fbcsp_case);
    }
    if (want("neck")) {
        cases.emplace_back("neck", neck_case);
    }
    if (want("head")) {
        cases.emplace_back("head", head_case);
    }

    std::vector<SuiteCheck> results;
    for (const auto& [name, builder] : cases) {
        SuiteCheck check;
        check.name = name;
        for (int s = 0; s < seeds; ++s) {
            // Central differences are only meaningful where the +-h window is
            // free of activation kinks; draw fresh instances until the
            // forward pass has a comfortable kink margin.
            Case instance;
            for (int attempt = 0; attempt < 64; ++attempt) {
                RngStream rng(derive_seed(std::hash<std::string>{}(name),
                                          101 + static_cast<std::uint64_t>(attempt),
                                          static_cast<std::uint64_t>(s)));
                instance = builder(rng);
                NoGradGuard no_grad;
                KinkMarginScope margin;
                instance.forward();
                if (margin.value() >= 20.0 * h) {
                    break;
                }
            }
            const auto report = gradcheck(instance.forward, instance.leaves, h);
            check.max_rel_err = std::max(check.max_rel_err, report.worst_rel_err());
        }
        results.push_back(std::move(check));
    }
    return results;
}

}  // namespace fbc
