#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fbc/params.hpp"
#include "fbc/tensor.hpp"

namespace fbc {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    // Probe points whose +-h window crossed an activation kink; central
    // differences are undefined there and those elements are not scored.
    std::int64_t kink_skips = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst_rel_err() const {
        double worst = 0.0;
        for (const auto& e : entries) {
            worst = std::max(worst, e.max_rel_err);
        }
        return worst;
    }

    bool pass(double tol) const { return worst_rel_err() <= tol; }
};

// Central-difference check of reverse-mode gradients. `forward` must rebuild
// the graph from the current leaf values and return a scalar loss; it is
// re-evaluated twice per leaf element. f64 only. Differences below the
// 1e-10 absolute floor count as zero relative error.
GradCheckReport gradcheck(const std::function<TensorPtr<double>()>& forward,
                          const ParamList<double>& leaves, double h = 1e-5);

}  // namespace fbc
