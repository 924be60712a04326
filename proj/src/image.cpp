#include "droplet/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace droplet {

void require_finite(const Image& img)
{
    for (float v : img.pixels()) {
        if (!std::isfinite(v)) throw std::invalid_argument("image contains non-finite values");
    }
}

float nearest_rank_quantile(std::span<const float> values, double q)
{
    if (values.empty()) throw std::invalid_argument("quantile of an empty range");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile fraction outside [0,1]");

    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);

    std::vector<float> scratch(values.begin(), values.end());
    auto nth = scratch.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(scratch.begin(), nth, scratch.end());
    return *nth;
}

Image contrast_stretch(const Image& img, double saturation)
{
    if (img.empty()) throw std::invalid_argument("contrast_stretch on an empty image");
    if (!(saturation >= 0.0 && saturation < 0.5)) {
        throw std::invalid_argument("saturation must lie in [0, 0.5), got " +
                                    std::to_string(saturation));
    }

    // Both quantiles from one partial sort.
    const auto n = img.size();
    auto rank_of = [n](double q) {
        auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
        return std::clamp<std::size_t>(r, 1, n) - 1;
    };
    const std::size_t lo_rank = rank_of(saturation / 2.0);
    const std::size_t hi_rank = rank_of(1.0 - saturation / 2.0);

    std::vector<float> scratch(img.pixels().begin(), img.pixels().end());
    auto hi_it = scratch.begin() + static_cast<std::ptrdiff_t>(hi_rank);
    std::nth_element(scratch.begin(), hi_it, scratch.end());
    const float hi = *hi_it;
    auto lo_it = scratch.begin() + static_cast<std::ptrdiff_t>(lo_rank);
    std::nth_element(scratch.begin(), lo_it, hi_it + 1);
    const float lo = *lo_it;

    Image out(img.width(), img.height(), 0.0f);
    if (!(hi > lo)) return out;

    const double scale = 1.0 / (static_cast<double>(hi) - static_cast<double>(lo));
    auto src = img.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = (static_cast<double>(src[i]) - lo) * scale;
        dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

namespace {

std::vector<double> gaussian_taps(double sigma, int radius)
{
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

}  // namespace

Image gaussian_smooth(const Image& img, double sigma, double truncate)
{
    if (!(sigma > 0.0)) throw std::invalid_argument("smoothing sigma must be positive");
    if (!(truncate > 0.0)) throw std::invalid_argument("smoothing truncate must be positive");

    const int w = img.width();
    const int h = img.height();
    const int radius = static_cast<int>(std::ceil(truncate * sigma));
    const auto taps = gaussian_taps(sigma, radius);

    Raster<double> horizontal(w, h);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        auto src = img.row(y);
        auto dst = horizontal.row(y);
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[static_cast<std::size_t>(k + radius)] * src[reflect_index(x + k, w)];
            }
            dst[x] = acc;
        }
    }

    Image out(w, h);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        auto dst = out.row(y);
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[static_cast<std::size_t>(k + radius)] *
                       horizontal(x, reflect_index(y + k, h));
            }
            dst[x] = static_cast<float>(acc);
        }
    }
    return out;
}

Image preprocess(const Image& img, double smooth_sigma, double saturation)
{
    if (!(smooth_sigma >= 0.0)) throw std::invalid_argument("smooth_sigma must be >= 0");
    if (smooth_sigma == 0.0) return contrast_stretch(img, saturation);
    return contrast_stretch(gaussian_smooth(img, smooth_sigma), saturation);
}

}  // namespace droplet
