#pragma once

#include "droplet/raster.hpp"
#include "droplet/scale_space.hpp"

#include <complex>
#include <cstddef>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace droplet {

enum class Backend { Direct, Fft };

std::string_view to_string(Backend backend) noexcept;
/// Accepts "direct" or "fft"; throws std::invalid_argument otherwise.
Backend parse_backend(std::string_view name);

/// Scale-space stack: levels[i] is the image blurred by the Gaussian of sigmas[i].
template <typename T>
struct BasicScaleStack {
    int width = 0;
    int height = 0;
    std::vector<Raster<T>> levels;
    std::vector<double> sigmas;

    std::size_t n_levels() const noexcept { return levels.size(); }
};

using ScaleStack = BasicScaleStack<float>;
using ScaleStack64 = BasicScaleStack<double>;

struct ConvolveLimits {
    /// Upper bound on width * height * n_levels for one stack.
    std::size_t max_stack_values = std::size_t{1} << 31;
};

/// Smallest n >= minimum whose prime factors are all in {2, 3, 5, 7}.
int fft_friendly_size(int minimum);

/// Reusable real-to-complex / complex-to-real transform pair for one padded
/// shape. The padded extent per axis is at least dim + max_width - 1.
template <typename T>
class FftPlan {
public:
    FftPlan(int width, int height, int max_width);
    ~FftPlan();
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int padded_width() const noexcept { return padded_width_; }
    int padded_height() const noexcept { return padded_height_; }
    /// Number of complex bins in the half spectrum.
    std::size_t spectrum_size() const noexcept
    {
        return static_cast<std::size_t>(padded_height_) * static_cast<std::size_t>(padded_width_ / 2 + 1);
    }
    std::size_t real_size() const noexcept
    {
        return static_cast<std::size_t>(padded_height_) * static_cast<std::size_t>(padded_width_);
    }

    /// in: real_size() samples; out: spectrum_size() bins. Both from fft_alloc.
    void forward(T* in, std::complex<T>* out) const;
    /// Unnormalized inverse; destroys `in`.
    void inverse(std::complex<T>* in, T* out) const;

    /// Total plans constructed in this process (all shapes, this precision).
    static std::size_t plans_created() noexcept;

private:
    int width_;
    int height_;
    int padded_width_;
    int padded_height_;
    void* forward_plan_ = nullptr;
    void* inverse_plan_ = nullptr;
};

/// SIMD-aligned buffer owned through FFTW's allocator.
template <typename V>
struct FftFree {
    void operator()(V* p) const noexcept;
};
template <typename V>
using FftBuffer = std::unique_ptr<V[], FftFree<V>>;
template <typename V>
FftBuffer<V> fft_alloc(std::size_t count);

/// Kernel spectra of a bank for one image shape, normalized so that the
/// inverse transform needs no further scaling.
template <typename T>
class SpectralBank {
public:
    SpectralBank(const KernelBank& bank, int width, int height);

    const FftPlan<T>& plan() const noexcept { return plan_; }
    const std::complex<T>* spectrum(std::size_t i) const { return spectra_.at(i).get(); }
    std::size_t size() const noexcept { return spectra_.size(); }
    /// Unnormalized DC bin (kernel sum) for level i.
    double dc(std::size_t i) const;

private:
    FftPlan<T> plan_;
    double scale_;
    std::vector<FftBuffer<std::complex<T>>> spectra_;
};

/// Computes scale-space stacks for one kernel bank with a fixed backend.
/// Immutable apart from the spectrum cache, which is filled at most once per
/// image shape even under concurrent callers.
template <typename T>
class BasicConvolver {
public:
    BasicConvolver(std::shared_ptr<const KernelBank> bank, Backend backend, ConvolveLimits limits = {});

    BasicScaleStack<T> operator()(const Raster<float>& img) const;

    const KernelBank& bank() const noexcept { return *bank_; }
    Backend backend() const noexcept { return backend_; }

    std::shared_ptr<const SpectralBank<T>> spectra_for(int width, int height) const;
    std::size_t cached_shapes() const;

private:
    BasicScaleStack<T> direct(const Raster<float>& img) const;
    BasicScaleStack<T> fft(const Raster<float>& img) const;

    std::shared_ptr<const KernelBank> bank_;
    Backend backend_;
    ConvolveLimits limits_;

    mutable std::mutex cache_mutex_;
    mutable std::map<std::pair<int, int>, std::shared_future<std::shared_ptr<const SpectralBank<T>>>> cache_;
};

using Convolver = BasicConvolver<float>;
using Convolver64 = BasicConvolver<double>;

/// One-shot convolution of an image with every kernel of a bank ("same"
/// output size, reflect boundaries). Both backends agree to rounding error.
template <typename T = float>
BasicScaleStack<T> convolve_bank(const Raster<float>& img, const KernelBank& bank, Backend backend,
                                 ConvolveLimits limits = {});

/// Image extended by `pad` pixels of reflected border on every side.
Raster<float> reflect_extend(const Raster<float>& img, int pad);

}  // namespace droplet
