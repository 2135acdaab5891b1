#include "fbc/gradcheck.hpp"

#include <cmath>

namespace fbc {

namespace {
constexpr double kAbsFloor = 1e-10;
}

GradCheckReport gradcheck(const std::function<TensorPtr<double>()>& forward,
                          const ParamList<double>& leaves, double h) {
    if (!(h >= 1e-6 && h <= 1e-4)) {
        throw GraphError("gradcheck: step size h must lie in [1e-6, 1e-4]");
    }

    for (const auto& leaf : leaves) {
        if (!leaf.tensor->requires_grad) {
            throw GraphError("gradcheck: leaf '" + leaf.name + "' does not require grad");
        }
        leaf.tensor->zero_grad();
    }

    auto loss = forward();
    if (loss->size() != 1) {
        throw GraphError("gradcheck: forward() must return a scalar");
    }
    loss->backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        analytic.push_back(leaf.tensor->grad);
    }

    GradCheckReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const auto& leaf = leaves[li];
        GradCheckEntry entry;
        entry.name = leaf.name;
        auto& values = leaf.tensor->data;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double f_plus = 0.0;
            double f_minus = 0.0;
            std::uint64_t sig_plus = 0;
            std::uint64_t sig_minus = 0;
            {
                values[i] = saved + h;
                SignHashScope sig;
                f_plus = forward()->item();
                sig_plus = sig.value();
            }
            {
                values[i] = saved - h;
                SignHashScope sig;
                f_minus = forward()->item();
                sig_minus = sig.value();
            }
            values[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                throw NonFiniteError("gradcheck: non-finite loss while perturbing " + leaf.name);
            }
            if (sig_plus != sig_minus) {
                // The probe window straddles an activation kink; a central
                // difference across it does not estimate the derivative.
                ++entry.kink_skips;
                continue;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[li][i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err =
                abs_err <= kAbsFloor ? 0.0 : abs_err / std::max(std::abs(a), std::abs(numeric));
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, rel_err);
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace fbc
