#include "droplet/scale_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace droplet {

SigmaLadder::SigmaLadder(double min_sigma, double max_sigma, int n_bin)
    : min_sigma_(min_sigma), max_sigma_(max_sigma), n_bin_(n_bin)
{
    if (!(min_sigma > 0.0) || !std::isfinite(min_sigma)) {
        throw std::invalid_argument("min_sigma must be positive, got " + std::to_string(min_sigma));
    }
    if (!(max_sigma >= min_sigma) || !std::isfinite(max_sigma)) {
        throw std::invalid_argument("max_sigma must be >= min_sigma");
    }
    if (n_bin < 1) throw std::invalid_argument("n_bin must be >= 1, got " + std::to_string(n_bin));
    if (max_sigma == min_sigma) {
        throw std::invalid_argument("sigma ladder needs max_sigma > min_sigma to form any difference");
    }

    delta_sigma_ = (max_sigma - min_sigma) / n_bin;
    sigmas_.resize(static_cast<std::size_t>(n_bin) + 1);
    for (int i = 0; i <= n_bin; ++i) sigmas_[static_cast<std::size_t>(i)] = min_sigma + i * delta_sigma_;
    sigmas_.back() = max_sigma;
}

int kernel_radius(double sigma, double truncate)
{
    return static_cast<int>(std::ceil(truncate * sigma - 1e-9));
}

KernelBank::KernelBank(SigmaLadder ladder, double truncate, KernelBankLimits limits)
    : ladder_(std::move(ladder)), truncate_(truncate)
{
    if (!(truncate > 0.0) || !std::isfinite(truncate)) {
        throw std::invalid_argument("truncate must be positive");
    }

    for (double s : ladder_.sigmas()) radii_.push_back(kernel_radius(s, truncate));
    const int max_radius = *std::max_element(radii_.begin(), radii_.end());
    max_width_ = 2 * max_radius + 1;
    if (max_width_ > limits.max_width) {
        throw std::length_error("kernel width " + std::to_string(max_width_) +
                                " exceeds configured cap " + std::to_string(limits.max_width));
    }

    kernels_.reserve(ladder_.size());
    for (std::size_t i = 0; i < ladder_.size(); ++i) {
        const double sigma = ladder_.sigma(i);
        const int r = radii_[i];
        Raster<double> k(max_width_, max_width_, 0.0);
        double sum = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                k(max_radius + dx, max_radius + dy) = v;
                sum += v;
            }
        }
        for (double& v : k.pixels()) v /= sum;
        kernels_.push_back(std::move(k));
    }
}

}  // namespace droplet
