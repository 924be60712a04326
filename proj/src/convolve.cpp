#include "droplet/convolve.hpp"

#include <fftw3.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace droplet {

std::string_view to_string(Backend backend) noexcept
{
    return backend == Backend::Direct ? "direct" : "fft";
}

Backend parse_backend(std::string_view name)
{
    if (name == "direct") return Backend::Direct;
    if (name == "fft") return Backend::Fft;
    throw std::invalid_argument("unknown backend '" + std::string(name) + "' (expected direct or fft)");
}

int fft_friendly_size(int minimum)
{
    if (minimum < 1) minimum = 1;
    for (int n = minimum;; ++n) {
        int m = n;
        for (int p : {2, 3, 5, 7}) {
            while (m % p == 0) m /= p;
        }
        if (m == 1) return n;
    }
}

Raster<float> reflect_extend(const Raster<float>& img, int pad)
{
    const int w = img.width();
    const int h = img.height();
    Raster<float> out(w + 2 * pad, h + 2 * pad);
    for (int y = 0; y < out.height(); ++y) {
        auto src = img.row(reflect_index(y - pad, h));
        auto dst = out.row(y);
        for (int x = 0; x < out.width(); ++x) dst[x] = src[reflect_index(x - pad, w)];
    }
    return out;
}

// ------------------------------------------------------------------ FFTW glue

namespace {

// FFTW's planner is not reentrant; execution with new-array calls is.
std::mutex& planner_mutex()
{
    static std::mutex m;
    return m;
}

template <typename T>
struct Fftw;

template <>
struct Fftw<float> {
    using plan = fftwf_plan;
    using complex = fftwf_complex;
    static void* malloc(std::size_t bytes) { return fftwf_malloc(bytes); }
    static void free(void* p) { fftwf_free(p); }
    static plan r2c(int n0, int n1, float* in, complex* out, unsigned flags)
    {
        return fftwf_plan_dft_r2c_2d(n0, n1, in, out, flags);
    }
    static plan c2r(int n0, int n1, complex* in, float* out, unsigned flags)
    {
        return fftwf_plan_dft_c2r_2d(n0, n1, in, out, flags);
    }
    static void exec_r2c(plan p, float* in, complex* out) { fftwf_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
    static void destroy(plan p) { fftwf_destroy_plan(p); }
};

template <>
struct Fftw<double> {
    using plan = fftw_plan;
    using complex = fftw_complex;
    static void* malloc(std::size_t bytes) { return fftw_malloc(bytes); }
    static void free(void* p) { fftw_free(p); }
    static plan r2c(int n0, int n1, double* in, complex* out, unsigned flags)
    {
        return fftw_plan_dft_r2c_2d(n0, n1, in, out, flags);
    }
    static plan c2r(int n0, int n1, complex* in, double* out, unsigned flags)
    {
        return fftw_plan_dft_c2r_2d(n0, n1, in, out, flags);
    }
    static void exec_r2c(plan p, double* in, complex* out) { fftw_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
    static void destroy(plan p) { fftw_destroy_plan(p); }
};

template <typename T>
std::atomic<std::size_t>& plan_counter()
{
    static std::atomic<std::size_t> count{0};
    return count;
}

template <typename T>
auto* as_fftw(std::complex<T>* p)
{
    return reinterpret_cast<typename Fftw<T>::complex*>(p);
}

}  // namespace

template <typename V>
void FftFree<V>::operator()(V* p) const noexcept
{
    fftw_free(p);
}

template <typename V>
FftBuffer<V> fft_alloc(std::size_t count)
{
    void* p = fftw_malloc(sizeof(V) * std::max<std::size_t>(count, 1));
    if (p == nullptr) throw std::bad_alloc();
    return FftBuffer<V>(static_cast<V*>(p));
}

template <typename T>
FftPlan<T>::FftPlan(int width, int height, int max_width)
    : width_(width), height_(height)
{
    if (width < 1 || height < 1 || max_width < 1) throw std::invalid_argument("FFT plan dimensions must be >= 1");
    padded_width_ = fft_friendly_size(width + max_width - 1);
    padded_height_ = fft_friendly_size(height + max_width - 1);

    auto in = fft_alloc<T>(real_size());
    auto out = fft_alloc<std::complex<T>>(spectrum_size());
    std::lock_guard lock(planner_mutex());
    // ESTIMATE keeps plans (and therefore results) deterministic across runs.
    auto fwd = Fftw<T>::r2c(padded_height_, padded_width_, in.get(), as_fftw(out.get()),
                            FFTW_ESTIMATE | FFTW_DESTROY_INPUT);
    auto inv = Fftw<T>::c2r(padded_height_, padded_width_, as_fftw(out.get()), in.get(),
                            FFTW_ESTIMATE | FFTW_DESTROY_INPUT);
    if (fwd == nullptr || inv == nullptr) throw std::runtime_error("FFTW planning failed");
    forward_plan_ = fwd;
    inverse_plan_ = inv;
    ++plan_counter<T>();
}

template <typename T>
FftPlan<T>::~FftPlan()
{
    std::lock_guard lock(planner_mutex());
    Fftw<T>::destroy(static_cast<typename Fftw<T>::plan>(forward_plan_));
    Fftw<T>::destroy(static_cast<typename Fftw<T>::plan>(inverse_plan_));
}

template <typename T>
void FftPlan<T>::forward(T* in, std::complex<T>* out) const
{
    Fftw<T>::exec_r2c(static_cast<typename Fftw<T>::plan>(forward_plan_), in, as_fftw(out));
}

template <typename T>
void FftPlan<T>::inverse(std::complex<T>* in, T* out) const
{
    Fftw<T>::exec_c2r(static_cast<typename Fftw<T>::plan>(inverse_plan_), as_fftw(in), out);
}

template <typename T>
std::size_t FftPlan<T>::plans_created() noexcept
{
    return plan_counter<T>().load();
}

// ------------------------------------------------------------------ spectra

template <typename T>
SpectralBank<T>::SpectralBank(const KernelBank& bank, int width, int height)
    : plan_(width, height, bank.max_width())
{
    const int pw = plan_.padded_width();
    const int ph = plan_.padded_height();
    const int r = bank.max_radius();
    scale_ = 1.0 / (static_cast<double>(pw) * static_cast<double>(ph));

    auto real = fft_alloc<T>(plan_.real_size());
    spectra_.reserve(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& k = bank.kernel(i);
        std::fill_n(real.get(), plan_.real_size(), T{0});
        // Kernel center goes to the origin so level outputs need no shift.
        for (int dy = -r; dy <= r; ++dy) {
            const int py = (dy + ph) % ph;
            for (int dx = -r; dx <= r; ++dx) {
                const int px = (dx + pw) % pw;
                real[static_cast<std::size_t>(py) * pw + px] = static_cast<T>(k(r + dx, r + dy));
            }
        }
        auto spectrum = fft_alloc<std::complex<T>>(plan_.spectrum_size());
        plan_.forward(real.get(), spectrum.get());
        const T s = static_cast<T>(scale_);
        for (std::size_t j = 0; j < plan_.spectrum_size(); ++j) spectrum[j] *= s;
        spectra_.push_back(std::move(spectrum));
    }
}

template <typename T>
double SpectralBank<T>::dc(std::size_t i) const
{
    return static_cast<double>(spectrum(i)[0].real()) / scale_;
}

// ------------------------------------------------------------------ convolver

template <typename T>
BasicConvolver<T>::BasicConvolver(std::shared_ptr<const KernelBank> bank, Backend backend,
                                  ConvolveLimits limits)
    : bank_(std::move(bank)), backend_(backend), limits_(limits)
{
    if (!bank_) throw std::invalid_argument("convolver needs a kernel bank");
}

template <typename T>
std::shared_ptr<const SpectralBank<T>> BasicConvolver<T>::spectra_for(int width, int height) const
{
    using Entry = std::shared_ptr<const SpectralBank<T>>;
    std::promise<Entry> promise;
    std::shared_future<Entry> future;
    bool builder = false;
    {
        std::lock_guard lock(cache_mutex_);
        auto [it, inserted] = cache_.try_emplace({width, height});
        if (inserted) {
            it->second = promise.get_future().share();
            builder = true;
        }
        future = it->second;
    }
    if (builder) {
        try {
            promise.set_value(std::make_shared<const SpectralBank<T>>(*bank_, width, height));
        } catch (...) {
            promise.set_exception(std::current_exception());
            std::lock_guard lock(cache_mutex_);
            cache_.erase({width, height});
        }
    }
    return future.get();
}

template <typename T>
std::size_t BasicConvolver<T>::cached_shapes() const
{
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
}

template <typename T>
BasicScaleStack<T> BasicConvolver<T>::operator()(const Raster<float>& img) const
{
    if (img.empty()) throw std::invalid_argument("cannot convolve an empty image");
    const std::size_t values = img.size() * bank_->size();
    if (values > limits_.max_stack_values) {
        throw std::length_error("scale stack of " + std::to_string(values) +
                                " values exceeds configured cap");
    }
    return backend_ == Backend::Direct ? direct(img) : fft(img);
}

template <typename T>
BasicScaleStack<T> BasicConvolver<T>::direct(const Raster<float>& img) const
{
    const int w = img.width();
    const int h = img.height();
    const int pad = bank_->max_radius();
    const Raster<float> ext = reflect_extend(img, pad);

    BasicScaleStack<T> stack;
    stack.width = w;
    stack.height = h;
    stack.sigmas.assign(bank_->ladder().sigmas().begin(), bank_->ladder().sigmas().end());
    stack.levels.assign(bank_->size(), Raster<T>(w, h));

    for (std::size_t level = 0; level < bank_->size(); ++level) {
        const auto& kernel = bank_->kernel(level);
        // The padded border of each kernel is zero; only the support contributes.
        const int r = bank_->radius(level);
        Raster<T>& out = stack.levels[level];

#pragma omp parallel
        {
            std::vector<double> acc(static_cast<std::size_t>(w));
            std::vector<double> folded(static_cast<std::size_t>(w + 2 * r));
#pragma omp for schedule(static)
            for (int y = 0; y < h; ++y) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int ky = 0; ky <= r; ++ky) {
                    // Rows y+ky and y-ky share kernel weights (isotropy), so
                    // fold them before the horizontal pass.
                    const float* above = ext.row(y + pad - ky).data() + (pad - r);
                    const float* below = ext.row(y + pad + ky).data() + (pad - r);
                    double* f = folded.data();
                    const int n = w + 2 * r;
                    if (ky == 0) {
                        for (int j = 0; j < n; ++j) f[j] = static_cast<double>(above[j]);
                    } else {
                        for (int j = 0; j < n; ++j) f[j] = static_cast<double>(above[j]) + static_cast<double>(below[j]);
                    }
                    const double* weights = kernel.row(pad + ky).data() + pad;
                    double* a = acc.data();
                    const double w0 = weights[0];
                    const double* centre = f + r;
                    for (int x = 0; x < w; ++x) a[x] += w0 * centre[x];
                    for (int kx = 1; kx <= r; ++kx) {
                        const double wk = weights[kx];
                        const double* left = f + r - kx;
                        const double* right = f + r + kx;
                        for (int x = 0; x < w; ++x) a[x] += wk * (left[x] + right[x]);
                    }
                }
                auto dst = out.row(y);
                for (int x = 0; x < w; ++x) dst[x] = static_cast<T>(acc[static_cast<std::size_t>(x)]);
            }
        }
    }
    return stack;
}

template <typename T>
BasicScaleStack<T> BasicConvolver<T>::fft(const Raster<float>& img) const
{
    const int w = img.width();
    const int h = img.height();
    const int pad = bank_->max_radius();
    const auto spectra = spectra_for(w, h);
    const auto& plan = spectra->plan();
    const int pw = plan.padded_width();

    // Reflect-extend then transform once; every level reuses the spectrum.
    auto image_real = fft_alloc<T>(plan.real_size());
    std::fill_n(image_real.get(), plan.real_size(), T{0});
    for (int y = 0; y < h + 2 * pad; ++y) {
        auto src = img.row(reflect_index(y - pad, h));
        T* dst = image_real.get() + static_cast<std::size_t>(y) * pw;
        for (int x = 0; x < w + 2 * pad; ++x) dst[x] = static_cast<T>(src[reflect_index(x - pad, w)]);
    }
    auto image_spectrum = fft_alloc<std::complex<T>>(plan.spectrum_size());
    plan.forward(image_real.get(), image_spectrum.get());

    BasicScaleStack<T> stack;
    stack.width = w;
    stack.height = h;
    stack.sigmas.assign(bank_->ladder().sigmas().begin(), bank_->ladder().sigmas().end());
    stack.levels.assign(bank_->size(), Raster<T>(w, h));

    const auto n_levels = static_cast<int>(bank_->size());
#pragma omp parallel
    {
        auto product = fft_alloc<std::complex<T>>(plan.spectrum_size());
        auto level_real = fft_alloc<T>(plan.real_size());
#pragma omp for schedule(dynamic)
        for (int level = 0; level < n_levels; ++level) {
            const std::complex<T>* k = spectra->spectrum(static_cast<std::size_t>(level));
            const std::complex<T>* s = image_spectrum.get();
            std::complex<T>* p = product.get();
            for (std::size_t j = 0; j < plan.spectrum_size(); ++j) p[j] = s[j] * k[j];
            plan.inverse(p, level_real.get());
            auto& out = stack.levels[static_cast<std::size_t>(level)];
            for (int y = 0; y < h; ++y) {
                const T* src = level_real.get() + static_cast<std::size_t>(y + pad) * pw + pad;
                std::copy_n(src, w, out.row(y).begin());
            }
        }
    }
    return stack;
}

template <typename T>
BasicScaleStack<T> convolve_bank(const Raster<float>& img, const KernelBank& bank, Backend backend,
                                 ConvolveLimits limits)
{
    // Non-owning handle: the convolver does not outlive this call.
    std::shared_ptr<const KernelBank> view(&bank, [](const KernelBank*) {});
    return BasicConvolver<T>(std::move(view), backend, limits)(img);
}

template struct FftFree<float>;
template struct FftFree<double>;
template struct FftFree<std::complex<float>>;
template struct FftFree<std::complex<double>>;
template FftBuffer<float> fft_alloc<float>(std::size_t);
template FftBuffer<double> fft_alloc<double>(std::size_t);
template FftBuffer<std::complex<float>> fft_alloc<std::complex<float>>(std::size_t);
template FftBuffer<std::complex<double>> fft_alloc<std::complex<double>>(std::size_t);
template class FftPlan<float>;
template class FftPlan<double>;
template class SpectralBank<float>;
template class SpectralBank<double>;
template class BasicConvolver<float>;
template class BasicConvolver<double>;
template ScaleStack convolve_bank<float>(const Raster<float>&, const KernelBank&, Backend, ConvolveLimits);
template ScaleStack64 convolve_bank<double>(const Raster<float>&, const KernelBank&, Backend, ConvolveLimits);

}  // namespace droplet
