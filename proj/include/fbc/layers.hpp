#pragma once

#include <cmath>

#include "fbc/nn_ops.hpp"
#include "fbc/params.hpp"
#include "fbc/rng.hpp"

namespace fbc {

enum class InitMode { He, Zero };

inline InitMode parse_init_mode(const std::string& s) {
    if (s == "he") {
        return InitMode::He;
    }
    if (s == "zero") {
        return InitMode::Zero;
    }
    throw ShapeError("unknown init mode '" + s + "' (expected 'he' or 'zero')");
}

struct ConvBnActConfig {
    std::int64_t c_in = 0;
    std::int64_t c_out = 0;
    std::int64_t kernel_size = 3;
    std::int64_t stride = 1;
    double negative_slope = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.03;
    bool conv_bias = true;
    InitMode init = InitMode::He;
};

// Conv -> BatchNorm -> LeakyReLU with shape-preserving padding (k-1)/2.
template <class T>
class ConvBnAct {
public:
    ConvBnAct(const ConvBnActConfig& cfg, RngStream& rng) : cfg_(cfg) {
        if (cfg.c_in < 1 || cfg.c_out < 1) {
            throw ShapeError("ConvBnAct: channel counts must be positive");
        }
        if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0) {
            throw ShapeError("ConvBnAct: kernel size must be odd");
        }
        const Shape kshape{cfg.c_out, cfg.c_in, cfg.kernel_size, cfg.kernel_size};
        if (cfg.init == InitMode::He) {
            const double fan_in =
                static_cast<double>(cfg.c_in * cfg.kernel_size * cfg.kernel_size);
            kernel_ = randn<T>(kshape, rng, std::sqrt(2.0 / fan_in), true);
        } else {
            kernel_ = zeros<T>(kshape, true);
        }
        if (cfg.conv_bias) {
            conv_bias_ = zeros<T>(Shape{cfg.c_out}, true);
        }
        bn_gamma_ = ones<T>(Shape{cfg.c_out}, true);
        bn_beta_ = zeros<T>(Shape{cfg.c_out}, true);
        bn_running_mean_ = zeros<T>(Shape{cfg.c_out}, false);
        bn_running_var_ = ones<T>(Shape{cfg.c_out}, false);
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training) const {
        const std::int64_t pad = (cfg_.kernel_size - 1) / 2;
        auto y = conv2d(x, kernel_, conv_bias_, cfg_.stride, pad);
        y = batch_norm2d(y, bn_gamma_, bn_beta_, bn_running_mean_, bn_running_var_,
                         static_cast<T>(cfg_.bn_eps), static_cast<T>(cfg_.bn_momentum), training);
        return leaky_relu(y, static_cast<T>(cfg_.negative_slope));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".kernel", kernel_, false});
        if (conv_bias_) {
            out.push_back({prefix + ".conv_bias", conv_bias_, false});
        }
        out.push_back({prefix + ".bn_gamma", bn_gamma_, false});
        out.push_back({prefix + ".bn_beta", bn_beta_, false});
        out.push_back({prefix + ".bn_running_mean", bn_running_mean_, true});
        out.push_back({prefix + ".bn_running_var", bn_running_var_, true});
    }

    std::int64_t param_count() const {
        std::int64_t n = cfg_.c_out * cfg_.c_in * cfg_.kernel_size * cfg_.kernel_size;
        if (cfg_.conv_bias) {
            n += cfg_.c_out;
        }
        return n + 2 * cfg_.c_out;  // bn affine
    }

    const ConvBnActConfig& config() const { return cfg_; }
    const TensorPtr<T>& kernel() const { return kernel_; }
    const TensorPtr<T>& conv_bias() const { return conv_bias_; }
    const TensorPtr<T>& bn_gamma() const { return bn_gamma_; }
    const TensorPtr<T>& bn_beta() const { return bn_beta_; }
    const TensorPtr<T>& bn_running_mean() const { return bn_running_mean_; }
    const TensorPtr<T>& bn_running_var() const { return bn_running_var_; }

private:
    ConvBnActConfig cfg_;
    TensorPtr<T> kernel_;
    TensorPtr<T> conv_bias_;
    TensorPtr<T> bn_gamma_;
    TensorPtr<T> bn_beta_;
    TensorPtr<T> bn_running_mean_;
    TensorPtr<T> bn_running_var_;
};

struct MlpGateConfig {
    std::int64_t channels = 0;
    std::int64_t ratio = 16;
    double negative_slope = 0.1;
    bool bias = true;
    InitMode init = InitMode::He;
};

// Two-layer bottleneck gate: sigmoid(w2 * leaky(w1 * v + b1) + b2).
template <class T>
class MlpGate {
public:
    MlpGate(const MlpGateConfig& cfg, RngStream& rng) : cfg_(cfg) {
        if (cfg.channels < 1 || cfg.ratio < 1 || cfg.channels % cfg.ratio != 0) {
            throw ShapeError("MlpGate: compression ratio " + std::to_string(cfg.ratio) +
                             " must divide channel count " + std::to_string(cfg.channels));
        }
        const std::int64_t hidden = cfg.channels / cfg.ratio;
        if (cfg.init == InitMode::He) {
            w1_ = randn<T>(Shape{hidden, cfg.channels}, rng,
                           std::sqrt(2.0 / static_cast<double>(cfg.channels)), true);
            w2_ = randn<T>(Shape{cfg.channels, hidden}, rng,
                           std::sqrt(2.0 / static_cast<double>(hidden)), true);
        } else {
            w1_ = zeros<T>(Shape{hidden, cfg.channels}, true);
            w2_ = zeros<T>(Shape{cfg.channels, hidden}, true);
        }
        if (cfg.bias) {
            b1_ = zeros<T>(Shape{hidden}, true);
            b2_ = zeros<T>(Shape{cfg.channels}, true);
        }
    }

    TensorPtr<T> forward(const TensorPtr<T>& v) const {
        auto hidden = leaky_relu(linear(v, w1_, b1_), static_cast<T>(cfg_.negative_slope));
        return sigmoid(linear(hidden, w2_, b2_));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".w1", w1_, false});
        if (b1_) {
            out.push_back({prefix + ".b1", b1_, false});
        }
        out.push_back({prefix + ".w2", w2_, false});
        if (b2_) {
            out.push_back({prefix + ".b2", b2_, false});
        }
    }

    std::int64_t param_count() const {
        const std::int64_t hidden = cfg_.channels / cfg_.ratio;
        std::int64_t n = 2 * hidden * cfg_.channels;
        if (cfg_.bias) {
            n += hidden + cfg_.channels;
        }
        return n;
    }

    const MlpGateConfig& config() const { return cfg_; }
    const TensorPtr<T>& w1() const { return w1_; }
    const TensorPtr<T>& b1() const { return b1_; }
    const TensorPtr<T>& w2() const { return w2_; }
    const TensorPtr<T>& b2() const { return b2_; }

private:
    MlpGateConfig cfg_;
    TensorPtr<T> w1_, b1_, w2_, b2_;
};

}  // namespace fbc
