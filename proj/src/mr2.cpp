#include "fbc/mr2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fbc {

std::vector<Mr2CurvePoint> mr2_curve(const std::vector<DetectionRecord>& records,
                                     const Mr2Options& opts) {
    if (records.empty()) {
        throw EvalError("mr2: needs at least one image");
    }
    std::int64_t n_gt = 0;
    std::vector<std::pair<double, bool>> events;  // (score, is_tp)
    for (const auto& rec : records) {
        n_gt += static_cast<std::int64_t>(rec.gts.size());
        const auto match = match_detections(rec.dets, rec.gts, opts.iou_thresh);
        for (std::size_t i = 0; i < rec.dets.size(); ++i) {
            events.emplace_back(rec.dets[i].score, match.tp_flags[i]);
        }
    }
    if (n_gt == 0) {
        throw EvalError("mr2: undefined without ground truth");
    }

    std::sort(events.begin(), events.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    const double n_images = static_cast<double>(records.size());
    std::vector<Mr2CurvePoint> curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});

    std::int64_t tp = 0;
    std::int64_t fp = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].second) {
            ++tp;
        } else {
            ++fp;
        }
        // Emit one point per distinct score threshold.
        if (i + 1 == events.size() || events[i + 1].first != events[i].first) {
            Mr2CurvePoint pt;
            pt.threshold = events[i].first;
            pt.fppi = static_cast<double>(fp) / n_images;
            pt.miss_rate = 1.0 - static_cast<double>(tp) / static_cast<double>(n_gt);
            curve.push_back(pt);
        }
    }
    return curve;
}

double mr2(const std::vector<DetectionRecord>& records, const Mr2Options& opts) {
    if (opts.n_points < 1) {
        throw EvalError("mr2: needs at least one FPPI reference point");
    }
    const auto curve = mr2_curve(records, opts);

    double log_sum = 0.0;
    for (int i = 0; i < opts.n_points; ++i) {
        const double t = opts.n_points == 1
                             ? 0.0
                             : static_cast<double>(i) / static_cast<double>(opts.n_points - 1);
        const double ref = opts.fppi_min * std::pow(opts.fppi_max / opts.fppi_min, t);
        // Miss rate at the largest achieved FPPI <= ref. The curve is monotone
        // (FPPI up, miss down), so this is the minimum over the feasible set;
        // the accept-nothing point keeps it defined (miss 1.0).
        double miss = 1.0;
        for (const auto& pt : curve) {
            if (pt.fppi <= ref) {
                miss = std::min(miss, pt.miss_rate);
            }
        }
        log_sum += std::log(std::max(miss, opts.miss_floor));
    }
    return std::exp(log_sum / static_cast<double>(opts.n_points));
}

}  // namespace fbc
