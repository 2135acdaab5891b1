#include "fbc/boxes.hpp"

#include <algorithm>
#include <numeric>

namespace fbc {

double iou(const Box& a, const Box& b) {
    const double area_a = a.area();
    const double area_b = b.area();
    if (area_a <= 0.0 || area_b <= 0.0) {
        return 0.0;
    }
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    if (inter <= 0.0) {
        return 0.0;
    }
    return inter / (area_a + area_b - inter);
}

namespace {

// Indices sorted by descending score; equal scores keep the lower index first.
std::vector<std::size_t> score_order(const std::vector<ScoredBox>& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

}  // namespace

MatchResult match_detections(const std::vector<ScoredBox>& dets, const std::vector<Box>& gts,
                             double iou_thresh) {
    MatchResult result;
    result.tp_flags.assign(dets.size(), false);
    std::vector<bool> gt_taken(gts.size(), false);

    for (const std::size_t di : score_order(dets)) {
        double best = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_taken[gi]) {
                continue;
            }
            const double v = iou(dets[di].box, gts[gi]);
            if (v > best) {  // ties resolve to the lower ground-truth index
                best = v;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size() && best >= iou_thresh) {
            gt_taken[best_gt] = true;
            result.tp_flags[di] = true;
            ++result.tp;
        } else {
            ++result.fp;
        }
    }
    result.fn = static_cast<std::int64_t>(gts.size()) - result.tp;
    return result;
}

std::vector<ScoredBox> nms(std::vector<ScoredBox> dets, double iou_thresh) {
    const auto order = score_order(dets);
    std::vector<ScoredBox> kept;
    for (const std::size_t di : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (iou(dets[di].box, k.box) >= iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(dets[di]);
        }
    }
    return kept;
}

}  // namespace fbc
