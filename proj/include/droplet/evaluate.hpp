#pragma once

#include "droplet/detector.hpp"
#include "droplet/synth.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace droplet {

struct Match {
    std::size_t pred = 0;   // index into the predictions as given
    std::size_t truth = 0;
    double iou = 0.0;
};

struct EvalReport {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double iou_threshold = 0.5;
    std::vector<Match> matches;
};

/// IoU of the axis-aligned boxes [x-r, x+r] x [y-r, y+r] (continuous area).
double box_iou(double x1, double y1, double r1, double x2, double y2, double r2);

/// Greedy VOC-style matching: predictions in descending response (ties by
/// (y, x)) each take the unmatched truth of highest box IoU if it reaches the
/// threshold. Zero denominators give precision/recall of 1.
EvalReport match_voc(std::span<const Blob> preds, std::span<const GroundTruthCircle> truths,
                     double iou_threshold = 0.5);

struct ParityRow {
    std::string image;
    double precision_a = 0.0;
    double recall_a = 0.0;
    double precision_b = 0.0;
    double recall_b = 0.0;
    double dp = 0.0;  // precision_b - precision_a
    double dr = 0.0;  // recall_b - recall_a
};

struct ParityStats {
    std::vector<ParityRow> rows;
    double mean_dp = 0.0;
    double mean_dr = 0.0;
    double std_dp = 0.0;  // population standard deviation
    double std_dr = 0.0;
    double mean_abs_dp = 0.0;
    double mean_abs_dr = 0.0;
    /// Rows with dp == dr == 0 exactly.
    std::size_t identical = 0;
};

struct ParityCase {
    std::string name;
    Image image;
    std::vector<GroundTruthCircle> truths;
};

/// Runs both configurations on every case and summarizes the per-image
/// precision/recall differences.
ParityStats parity(std::span<const ParityCase> cases, const DetectionParams& params_a,
                   const DetectionParams& params_b, double iou_threshold = 0.5);

/// Summary statistics over already-filled rows.
void summarize(ParityStats& stats);

}  // namespace droplet
