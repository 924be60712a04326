#include "droplet/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace droplet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool response_order(const Blob& a, const Blob& b)
{
    if (a.response != b.response) return a.response > b.response;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
}

void check_neighborhood(int neighborhood)
{
    if (neighborhood < 1 || neighborhood % 2 == 0) {
        throw std::invalid_argument("neighborhood must be a positive odd count, got " +
                                    std::to_string(neighborhood));
    }
}

// Groups same-scale candidates that touch (within the neighborhood half-width)
// and emits one blob per group at the member closest to the group centroid.
struct Candidate {
    int x;
    int y;
    float value;
};

void coalesce_plateaus(std::vector<Candidate>& candidates, int half, double sigma, bool boundary,
                       std::vector<Blob>& out)
{
    // Candidates arrive in raster order.
    const std::size_t n = candidates.size();
    std::vector<int> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int i) {
        while (parent[static_cast<std::size_t>(i)] != i) {
            parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
            i = parent[static_cast<std::size_t>(i)];
        }
        return i;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (candidates[j].y - candidates[i].y > half) break;
            if (std::abs(candidates[j].x - candidates[i].x) <= half) {
                const int a = find(static_cast<int>(i));
                const int b = find(static_cast<int>(j));
                if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
            }
        }
    }

    struct Group {
        double sx = 0.0;
        double sy = 0.0;
        int count = 0;
    };
    std::vector<Group> groups(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& g = groups[static_cast<std::size_t>(find(static_cast<int>(i)))];
        g.sx += candidates[i].x;
        g.sy += candidates[i].y;
        ++g.count;
    }
    std::vector<int> best(n, -1);
    std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        const auto root = static_cast<std::size_t>(find(static_cast<int>(i)));
        const auto& g = groups[root];
        const double cx = g.sx / g.count;
        const double cy = g.sy / g.count;
        const double d2 = (candidates[i].x - cx) * (candidates[i].x - cx) +
                          (candidates[i].y - cy) * (candidates[i].y - cy);
        // Strict comparison keeps the first member in raster order on ties.
        if (d2 < best_d2[root]) {
            best_d2[root] = d2;
            best[root] = static_cast<int>(i);
        }
    }
    for (std::size_t root = 0; root < n; ++root) {
        if (best[root] < 0) continue;
        const auto& c = candidates[static_cast<std::size_t>(best[root])];
        out.push_back(make_blob(c.x, c.y, sigma, c.value, boundary));
    }
}

}  // namespace

void sort_by_response(std::vector<Blob>& blobs)
{
    std::sort(blobs.begin(), blobs.end(), response_order);
}

void DetectionParams::validate() const
{
    (void)ladder();
    if (!(truncate > 0.0) || !std::isfinite(truncate)) throw std::invalid_argument("truncate must be positive");
    if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw std::invalid_argument("overlap must lie in [0, 1]");
    check_neighborhood(neighborhood);
    if (!(preprocess.smooth_sigma >= 0.0) || !std::isfinite(preprocess.smooth_sigma)) {
        throw std::invalid_argument("smooth_sigma must be >= 0");
    }
    if (!(preprocess.saturation >= 0.0 && preprocess.saturation < 0.5)) {
        throw std::invalid_argument("saturation must lie in [0, 0.5)");
    }
}

template <typename T>
DoGStack dog_stack(const BasicScaleStack<T>& stack, const SigmaLadder& ladder)
{
    if (stack.n_levels() != ladder.size()) {
        throw std::invalid_argument("scale stack has " + std::to_string(stack.n_levels()) +
                                    " levels but the ladder has " + std::to_string(ladder.size()) + " scales");
    }
    DoGStack dog;
    dog.width = stack.width;
    dog.height = stack.height;
    const auto n = static_cast<std::size_t>(ladder.n_bin());
    dog.sigmas.assign(ladder.sigmas().begin(), ladder.sigmas().begin() + static_cast<std::ptrdiff_t>(n));
    dog.slices.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sigma = ladder.sigma(i);
        auto narrow = stack.levels[i].pixels();
        auto wide = stack.levels[i + 1].pixels();
        Raster<float> slice(stack.width, stack.height);
        auto dst = slice.pixels();
        for (std::size_t p = 0; p < dst.size(); ++p) {
            dst[p] = static_cast<float>(sigma * (static_cast<double>(narrow[p]) - static_cast<double>(wide[p])));
        }
        dog.slices.push_back(std::move(slice));
    }
    return dog;
}

template DoGStack dog_stack<float>(const BasicScaleStack<float>&, const SigmaLadder&);
template DoGStack dog_stack<double>(const BasicScaleStack<double>&, const SigmaLadder&);

std::vector<Blob> find_extrema(const DoGStack& dog, double threshold, int neighborhood)
{
    check_neighborhood(neighborhood);
    const int half = neighborhood / 2;
    const int w = dog.width;
    const int h = dog.height;
    const int n = static_cast<int>(dog.n_slices());

    std::vector<Blob> blobs;
    std::vector<Candidate> candidates;
    for (int s = 0; s < n; ++s) {
        candidates.clear();
        const auto& slice = dog.slices[static_cast<std::size_t>(s)];
        const int s0 = std::max(0, s - half);
        const int s1 = std::min(n - 1, s + half);
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - half);
            const int y1 = std::min(h - 1, y + half);
            for (int x = 0; x < w; ++x) {
                const float v = slice(x, y);
                if (!(static_cast<double>(v) > threshold)) continue;
                const int x0 = std::max(0, x - half);
                const int x1 = std::min(w - 1, x + half);
                bool is_max = true;
                for (int ss = s0; ss <= s1 && is_max; ++ss) {
                    const auto& other = dog.slices[static_cast<std::size_t>(ss)];
                    for (int yy = y0; yy <= y1 && is_max; ++yy) {
                        auto row = other.row(yy);
                        for (int xx = x0; xx <= x1; ++xx) {
                            if (row[static_cast<std::size_t>(xx)] > v) {
                                is_max = false;
                                break;
                            }
                        }
                    }
                }
                if (is_max) candidates.push_back({x, y, v});
            }
        }
        const bool boundary = s == 0 || s == n - 1;
        coalesce_plateaus(candidates, half, dog.sigmas[static_cast<std::size_t>(s)], boundary, blobs);
    }
    return blobs;
}

std::vector<Blob> find_extrema_projected(const DoGStack& dog, double threshold, int neighborhood)
{
    check_neighborhood(neighborhood);
    const int half = neighborhood / 2;
    const int w = dog.width;
    const int h = dog.height;
    const int n = static_cast<int>(dog.n_slices());

    Raster<float> best(w, h, -std::numeric_limits<float>::infinity());
    Raster<int> best_scale(w, h, 0);
    for (int s = 0; s < n; ++s) {
        auto src = dog.slices[static_cast<std::size_t>(s)].pixels();
        auto dst = best.pixels();
        auto idx = best_scale.pixels();
        for (std::size_t p = 0; p < dst.size(); ++p) {
            if (src[p] > dst[p]) {
                dst[p] = src[p];
                idx[p] = s;
            }
        }
    }

    // Bucket 2-D maxima by their winning scale so plateau merging stays per scale.
    std::vector<std::vector<Candidate>> per_scale(static_cast<std::size_t>(n));
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - half);
        const int y1 = std::min(h - 1, y + half);
        for (int x = 0; x < w; ++x) {
            const float v = best(x, y);
            if (!(static_cast<double>(v) > threshold)) continue;
            const int x0 = std::max(0, x - half);
            const int x1 = std::min(w - 1, x + half);
            bool is_max = true;
            for (int yy = y0; yy <= y1 && is_max; ++yy) {
                for (int xx = x0; xx <= x1; ++xx) {
                    if (best(xx, yy) > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) per_scale[static_cast<std::size_t>(best_scale(x, y))].push_back({x, y, v});
        }
    }

    std::vector<Blob> blobs;
    for (int s = 0; s < n; ++s) {
        const bool boundary = s == 0 || s == n - 1;
        coalesce_plateaus(per_scale[static_cast<std::size_t>(s)], half, dog.sigmas[static_cast<std::size_t>(s)],
                          boundary, blobs);
    }
    return blobs;
}

double normalized_overlap(double x1, double y1, double r1, double x2, double y2, double r2)
{
    if (!(r1 > 0.0) || !(r2 > 0.0)) throw std::invalid_argument("disk radii must be positive");
    const double d = std::hypot(x2 - x1, y2 - y1);
    const double small = std::min(r1, r2);
    if (d >= r1 + r2) return 0.0;
    if (d <= std::abs(r1 - r2)) return 1.0;

    const double a1 = std::clamp((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1), -1.0, 1.0);
    const double a2 = std::clamp((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2), -1.0, 1.0);
    const double kite = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    const double area = r1 * r1 * std::acos(a1) + r2 * r2 * std::acos(a2) - 0.5 * std::sqrt(std::max(kite, 0.0));
    return std::clamp(area / (std::numbers::pi * small * small), 0.0, 1.0);
}

std::vector<Blob> prune_overlaps(std::vector<Blob> blobs, double overlap_threshold)
{
    if (!(overlap_threshold >= 0.0 && overlap_threshold <= 1.0)) {
        throw std::invalid_argument("overlap threshold must lie in [0, 1]");
    }
    sort_by_response(blobs);

    std::vector<bool> alive(blobs.size(), true);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < blobs.size(); ++i) {
            if (!alive[i]) continue;
            for (std::size_t j = i + 1; j < blobs.size(); ++j) {
                if (!alive[j]) continue;
                Blob& a = blobs[i];
                const Blob& b = blobs[j];
                const double reach = a.radius + b.radius;
                if (std::abs(a.x - b.x) >= reach || std::abs(a.y - b.y) >= reach) continue;
                if (normalized_overlap(a.x, a.y, a.radius, b.x, b.y, b.radius) > overlap_threshold) {
                    a.radius = 0.5 * (a.radius + b.radius);
                    a.sigma = a.radius / kSqrt2;
                    alive[j] = false;
                    changed = true;
                }
            }
        }
    }

    std::vector<Blob> kept;
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        if (alive[i]) kept.push_back(blobs[i]);
    }
    return kept;
}

RadiusHistogram histogram(std::span<const Blob> blobs, const SigmaLadder& ladder)
{
    RadiusHistogram hist;
    for (double s : ladder.sigmas()) hist.bin_centers.push_back(kSqrt2 * s);
    const std::size_t bins = hist.bin_centers.size();
    hist.counts.assign(bins, 0);
    hist.volume_weights.assign(bins, 0.0);

    for (const Blob& b : blobs) {
        std::size_t k = 0;
        while (k + 1 < bins && b.radius > 0.5 * (hist.bin_centers[k] + hist.bin_centers[k + 1])) ++k;
        ++hist.counts[k];
        hist.volume_weights[k] += 4.0 / 3.0 * std::numbers::pi * b.radius * b.radius * b.radius;
    }
    return hist;
}

Raster<double> log_reference_response(const Image& img, double sigma)
{
    if (!(sigma > 0.0)) throw std::invalid_argument("LoG sigma must be positive");
    const Image smoothed = gaussian_smooth(img, sigma, 5.0);
    const int w = img.width();
    const int h = img.height();
    Raster<double> out(w, h);
    const double s2 = sigma * sigma;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double c = smoothed(x, y);
            const double lap = smoothed(reflect_index(x - 1, w), y) + smoothed(reflect_index(x + 1, w), y) +
                               smoothed(x, reflect_index(y - 1, h)) + smoothed(x, reflect_index(y + 1, h)) - 4.0 * c;
            out(x, y) = s2 * lap;
        }
    }
    return out;
}

Detector::Detector(DetectionParams params)
    : params_((params.validate(), params)),
      bank_(std::make_shared<const KernelBank>(params_.ladder(), params_.truncate)),
      convolver_(bank_, params_.backend)
{
}

std::vector<Blob> Detector::detect_core(const Image& preprocessed) const
{
    const auto stack = convolver_(preprocessed);
    const auto dog = dog_stack(stack, bank_->ladder());
    return find_extrema(dog, params_.threshold, params_.neighborhood);
}

DetectionResult Detector::detect(const Image& img) const
{
    require_finite(img);
    DetectionResult result;

    auto t0 = Clock::now();
    const Image prepared = params_.preprocess.enabled ? preprocess(img, params_.preprocess) : img;
    result.timings.preprocess_ms = elapsed_ms(t0);

    t0 = Clock::now();
    const auto stack = convolver_(prepared);
    result.timings.convolve_ms = elapsed_ms(t0);

    t0 = Clock::now();
    const auto dog = dog_stack(stack, bank_->ladder());
    auto blobs = find_extrema(dog, params_.threshold, params_.neighborhood);
    result.timings.extrema_ms = elapsed_ms(t0);

    t0 = Clock::now();
    if (params_.prune) {
        blobs = prune_overlaps(std::move(blobs), params_.overlap);
    } else {
        sort_by_response(blobs);
    }
    result.histogram = histogram(blobs, bank_->ladder());
    result.timings.prune_ms = elapsed_ms(t0);

    result.blobs.blobs = std::move(blobs);
    result.blobs.width = img.width();
    result.blobs.height = img.height();
    result.blobs.params = params_;
    return result;
}

DetectionResult detect(const Image& img, const DetectionParams& params)
{
    return Detector(params).detect(img);
}

}  // namespace droplet
