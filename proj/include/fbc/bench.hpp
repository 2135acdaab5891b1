#pragma once

// Analytic cost model for the attention blocks: learnable parameter counts
// and multiply-accumulate counts of the dense kernel ops (convolutions,
// matrix products, gate layers). Elementwise work and normalization are not
// counted, matching how the instrumented counter tallies op kernels.

#include <cstdint>

#include "fbc/attention.hpp"

namespace fbc {

struct AttnCost {
    std::string kind;
    std::int64_t params = 0;
    std::uint64_t macs = 0;
};

inline std::uint64_t attention_macs(const AttentionConfig& cfg, std::int64_t h, std::int64_t w) {
    const auto c = static_cast<std::uint64_t>(cfg.channels);
    const auto hw = static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);
    const auto hidden = c / static_cast<std::uint64_t>(cfg.ratio);
    switch (cfg.kind) {
        case AttentionKind::None:
            return 0;
        case AttentionKind::Se:
            return 2 * c * hidden;  // two gate layers
        case AttentionKind::Eca:
            return c * static_cast<std::uint64_t>(cfg.eca_kernel);
        case AttentionKind::Coord: {
            const auto len = static_cast<std::uint64_t>(h) + static_cast<std::uint64_t>(w);
            return c * hidden * len      // shared stem over H+W positions
                   + hidden * c * static_cast<std::uint64_t>(h)   // height head
                   + hidden * c * static_cast<std::uint64_t>(w);  // width head
        }
        case AttentionKind::Fbca: {
            const auto k = static_cast<std::uint64_t>(cfg.fbca_kernel);
            return k * k * c * hw    // activation-map convolution (C -> 1)
                   + 2 * c * hw      // fore/background map-feature products
                   + 4 * c * hidden; // two gates, two layers each
        }
    }
    return 0;
}

inline std::int64_t attention_param_count(const AttentionConfig& cfg) {
    const std::int64_t c = cfg.channels;
    const std::int64_t hidden = c / cfg.ratio;
    const std::int64_t gate =
        2 * c * hidden + (cfg.bias ? hidden + c : 0);
    switch (cfg.kind) {
        case AttentionKind::None:
            return 0;
        case AttentionKind::Se:
            return gate;
        case AttentionKind::Eca:
            return cfg.eca_kernel;
        case AttentionKind::Coord:
            return hidden * c + 2 * c * hidden + (cfg.bias ? hidden + 2 * c : 0);
        case AttentionKind::Fbca:
            return cfg.fbca_kernel * cfg.fbca_kernel * c  // CBLR kernel, C -> 1
                   + (cfg.bias ? 1 : 0)                   // conv bias
                   + 2                                    // BN affine on one channel
                   + 2 * gate;                            // fore and background gates
    }
    return 0;
}

}  // namespace fbc
