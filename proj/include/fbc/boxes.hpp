#pragma once

#include <cstdint>
#include <vector>

namespace fbc {

// Axis-aligned box, (x, y) top-left corner plus width and height in pixels.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const { return w > 0.0 && h > 0.0 ? w * h : 0.0; }
};

struct ScoredBox {
    Box box;
    double score = 0.0;
};

// Scored detections for one image together with its ground truth.
struct DetectionRecord {
    std::vector<ScoredBox> dets;
    std::vector<Box> gts;
};

struct MatchResult {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    // tp_flags[i] says whether dets[i] (original index) matched a ground truth.
    std::vector<bool> tp_flags;
};

double iou(const Box& a, const Box& b);

// Greedy matching by descending score (ties by lower detection index): each
// detection takes the unmatched ground truth of highest IoU if that IoU
// reaches the threshold; each ground truth is matched at most once.
MatchResult match_detections(const std::vector<ScoredBox>& dets, const std::vector<Box>& gts,
                             double iou_thresh);

// Greedy non-maximum suppression at the given IoU threshold; returns the
// surviving boxes in descending score order.
std::vector<ScoredBox> nms(std::vector<ScoredBox> dets, double iou_thresh);

}  // namespace fbc
