#pragma once

#include <stdexcept>
#include <vector>

#include "fbc/boxes.hpp"

namespace fbc {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Mr2Options {
    double iou_thresh = 0.5;
    int n_points = 9;            // FPPI reference points, log-uniform
    double fppi_min = 1e-2;
    double fppi_max = 1.0;
    double miss_floor = 1e-10;   // applied before the log average
};

// One point of the miss-rate/FPPI tradeoff curve.
struct Mr2CurvePoint {
    double threshold = 0.0;
    double fppi = 0.0;
    double miss_rate = 1.0;
};

// Curve points in order of decreasing threshold (non-decreasing FPPI),
// starting with the implicit accept-nothing point.
std::vector<Mr2CurvePoint> mr2_curve(const std::vector<DetectionRecord>& records,
                                     const Mr2Options& opts);

// Log-average miss rate over FPPI in [fppi_min, fppi_max]. At each reference
// FPPI the curve is read at the largest achieved FPPI not exceeding it.
// Lower is better; 1.0 means everything missed.
double mr2(const std::vector<DetectionRecord>& records, const Mr2Options& opts = {});

}  // namespace fbc
