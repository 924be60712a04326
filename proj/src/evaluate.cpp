#include "droplet/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace droplet {

double box_iou(double x1, double y1, double r1, double x2, double y2, double r2)
{
    const double iw = std::min(x1 + r1, x2 + r2) - std::max(x1 - r1, x2 - r2);
    const double ih = std::min(y1 + r1, y2 + r2) - std::max(y1 - r1, y2 - r2);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = 4.0 * r1 * r1 + 4.0 * r2 * r2 - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

EvalReport match_voc(std::span<const Blob> preds, std::span<const GroundTruthCircle> truths, double iou_threshold)
{
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
        throw std::invalid_argument("IoU threshold must lie in (0, 1]");
    }

    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Blob& pa = preds[a];
        const Blob& pb = preds[b];
        if (pa.response != pb.response) return pa.response > pb.response;
        if (pa.y != pb.y) return pa.y < pb.y;
        return pa.x < pb.x;
    });

    EvalReport report;
    report.iou_threshold = iou_threshold;
    std::vector<bool> taken(truths.size(), false);
    for (std::size_t p : order) {
        const Blob& b = preds[p];
        double best = -1.0;
        std::size_t best_truth = 0;
        for (std::size_t t = 0; t < truths.size(); ++t) {
            if (taken[t]) continue;
            const double iou = box_iou(b.x, b.y, b.radius, truths[t].x, truths[t].y, truths[t].r);
            if (iou > best) {
                best = iou;
                best_truth = t;
            }
        }
        if (best >= iou_threshold) {
            taken[best_truth] = true;
            report.matches.push_back({p, best_truth, best});
            ++report.tp;
        } else {
            ++report.fp;
        }
    }
    report.fn = truths.size() - report.tp;
    report.precision = report.tp + report.fp == 0 ? 1.0 : static_cast<double>(report.tp) / (report.tp + report.fp);
    report.recall = report.tp + report.fn == 0 ? 1.0 : static_cast<double>(report.tp) / (report.tp + report.fn);
    return report;
}

void summarize(ParityStats& stats)
{
    const auto n = static_cast<double>(stats.rows.size());
    stats.mean_dp = stats.mean_dr = stats.std_dp = stats.std_dr = 0.0;
    stats.mean_abs_dp = stats.mean_abs_dr = 0.0;
    stats.identical = 0;
    if (stats.rows.empty()) return;

    for (const auto& row : stats.rows) {
        stats.mean_dp += row.dp;
        stats.mean_dr += row.dr;
        stats.mean_abs_dp += std::abs(row.dp);
        stats.mean_abs_dr += std::abs(row.dr);
        if (row.dp == 0.0 && row.dr == 0.0) ++stats.identical;
    }
    stats.mean_dp /= n;
    stats.mean_dr /= n;
    stats.mean_abs_dp /= n;
    stats.mean_abs_dr /= n;
    for (const auto& row : stats.rows) {
        stats.std_dp += (row.dp - stats.mean_dp) * (row.dp - stats.mean_dp);
        stats.std_dr += (row.dr - stats.mean_dr) * (row.dr - stats.mean_dr);
    }
    stats.std_dp = std::sqrt(stats.std_dp / n);
    stats.std_dr = std::sqrt(stats.std_dr / n);
}

ParityStats parity(std::span<const ParityCase> cases, const DetectionParams& params_a,
                   const DetectionParams& params_b, double iou_threshold)
{
    if (params_a.min_sigma != params_b.min_sigma || params_a.max_sigma != params_b.max_sigma ||
        params_a.n_bin != params_b.n_bin) {
        throw std::invalid_argument("parity requires both configurations to share one sigma ladder");
    }
    const Detector a(params_a);
    const Detector b(params_b);

    ParityStats stats;
    for (const auto& c : cases) {
        const auto ra = match_voc(a.detect(c.image).blobs.blobs, c.truths, iou_threshold);
        const auto rb = match_voc(b.detect(c.image).blobs.blobs, c.truths, iou_threshold);
        ParityRow row;
        row.image = c.name;
        row.precision_a = ra.precision;
        row.recall_a = ra.recall;
        row.precision_b = rb.precision;
        row.recall_b = rb.recall;
        row.dp = rb.precision - ra.precision;
        row.dr = rb.recall - ra.recall;
        stats.rows.push_back(std::move(row));
    }
    summarize(stats);
    return stats;
}

}  // namespace droplet
