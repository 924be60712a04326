#pragma once

#include "droplet/raster.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace droplet {

/// Arithmetic progression of n_bin + 1 Gaussian scales from min_sigma to max_sigma.
class SigmaLadder {
public:
    /// Throws std::invalid_argument unless 0 < min_sigma < max_sigma and n_bin >= 1.
    SigmaLadder(double min_sigma, double max_sigma, int n_bin);

    double min_sigma() const noexcept { return min_sigma_; }
    double max_sigma() const noexcept { return max_sigma_; }
    int n_bin() const noexcept { return n_bin_; }
    double delta_sigma() const noexcept { return delta_sigma_; }
    std::span<const double> sigmas() const noexcept { return sigmas_; }
    double sigma(std::size_t i) const { return sigmas_.at(i); }
    std::size_t size() const noexcept { return sigmas_.size(); }

private:
    double min_sigma_;
    double max_sigma_;
    int n_bin_;
    double delta_sigma_;
    std::vector<double> sigmas_;
};

inline SigmaLadder build_ladder(double min_sigma, double max_sigma, int n_bin)
{
    return SigmaLadder(min_sigma, max_sigma, n_bin);
}

struct KernelBankLimits {
    int max_width = 4097;
};

/// One normalized isotropic Gaussian per ladder scale, all zero-padded to a
/// shared odd width. Kernel i has support radius ceil(truncate * sigma_i).
class KernelBank {
public:
    KernelBank(SigmaLadder ladder, double truncate, KernelBankLimits limits = {});

    const SigmaLadder& ladder() const noexcept { return ladder_; }
    double truncate() const noexcept { return truncate_; }
    int max_width() const noexcept { return max_width_; }
    int max_radius() const noexcept { return max_width_ / 2; }
    std::size_t size() const noexcept { return kernels_.size(); }

    /// Dense max_width x max_width kernel, centered.
    const Raster<double>& kernel(std::size_t i) const { return kernels_.at(i); }
    /// Support radius before padding.
    int radius(std::size_t i) const { return radii_.at(i); }

private:
    SigmaLadder ladder_;
    double truncate_;
    int max_width_ = 0;
    std::vector<int> radii_;
    std::vector<Raster<double>> kernels_;
};

inline KernelBank build_kernel_bank(SigmaLadder ladder, double truncate, KernelBankLimits limits = {})
{
    return KernelBank(std::move(ladder), truncate, limits);
}

/// ceil(truncate * sigma), with a small tolerance so products that are
/// integers up to rounding error do not gain an extra pixel.
int kernel_radius(double sigma, double truncate);

}  // namespace droplet
