#pragma once

#include "droplet/convolve.hpp"
#include "droplet/image.hpp"
#include "droplet/raster.hpp"
#include "droplet/scale_space.hpp"

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace droplet {

inline constexpr double kSqrt2 = 1.41421356237309504880;

/// Scale-normalized difference-of-Gaussians responses, one slice per ladder
/// bin. slices[i] = sigma_i * (L_i - L_{i+1}), positive at bright blob centers.
struct DoGStack {
    int width = 0;
    int height = 0;
    std::vector<Raster<float>> slices;
    std::vector<double> sigmas;

    std::size_t n_slices() const noexcept { return slices.size(); }
};

struct Blob {
    int x = 0;
    int y = 0;
    double sigma = 0.0;
    double radius = 0.0;  // sqrt(2) * sigma
    double response = 0.0;
    bool at_scale_boundary = false;

    friend bool operator==(const Blob&, const Blob&) = default;
};

inline Blob make_blob(int x, int y, double sigma, double response, bool at_scale_boundary = false)
{
    return Blob{x, y, sigma, kSqrt2 * sigma, response, at_scale_boundary};
}

struct DetectionParams {
    double min_sigma = 2.0;
    double max_sigma = 14.0;
    int n_bin = 24;
    double truncate = 5.0;
    double threshold = 0.1;
    double overlap = 0.5;
    int neighborhood = 3;
    Backend backend = Backend::Fft;
    bool prune = true;
    PreprocessOptions preprocess;

    /// Throws std::invalid_argument describing the first bad field.
    void validate() const;
    SigmaLadder ladder() const { return SigmaLadder(min_sigma, max_sigma, n_bin); }

    friend bool operator==(const DetectionParams&, const DetectionParams&) = default;
};

struct BlobSet {
    std::vector<Blob> blobs;
    int width = 0;
    int height = 0;
    DetectionParams params;
};

struct RadiusHistogram {
    std::vector<double> bin_centers;
    std::vector<std::size_t> counts;
    std::vector<double> volume_weights;
};

/// Per-stage wall times of one detection, milliseconds.
struct StageTimings {
    double preprocess_ms = 0.0;
    double convolve_ms = 0.0;
    double extrema_ms = 0.0;
    double prune_ms = 0.0;
};

struct DetectionResult {
    BlobSet blobs;
    RadiusHistogram histogram;
    StageTimings timings;
};

template <typename T>
DoGStack dog_stack(const BasicScaleStack<T>& stack, const SigmaLadder& ladder);

/// Voxels equal to the maximum of their neighborhood^3 block (missing
/// neighbors ignored) with response above threshold. Connected plateau voxels
/// at one scale collapse to a single blob at the member nearest their centroid.
std::vector<Blob> find_extrema(const DoGStack& dog, double threshold, int neighborhood = 3);

/// Same search on the per-pixel maximum over scale followed by a 2-D
/// neighborhood maximum. Agrees with find_extrema for isolated blobs.
std::vector<Blob> find_extrema_projected(const DoGStack& dog, double threshold, int neighborhood = 3);

/// Disk intersection area divided by the smaller disk's area, in [0, 1].
double normalized_overlap(double x1, double y1, double r1, double x2, double y2, double r2);

/// Coalesces pairs whose normalized overlap exceeds the threshold, strongest
/// first: the stronger blob keeps its center and response, the radius becomes
/// the mean of both. Repeats until no pair exceeds the threshold. The result
/// is ordered by descending response, ties broken by (y, x).
std::vector<Blob> prune_overlaps(std::vector<Blob> blobs, double overlap_threshold);

/// Nearest bin center sqrt(2)*sigma_i, midpoint ties to the smaller radius.
RadiusHistogram histogram(std::span<const Blob> blobs, const SigmaLadder& ladder);

/// sigma^2 times the 5-point Laplacian of the image blurred at sigma.
Raster<double> log_reference_response(const Image& img, double sigma);

/// Descending response, then ascending (y, x).
void sort_by_response(std::vector<Blob>& blobs);

/// Reusable pipeline for one parameter set. Construction builds the kernel
/// bank; FFT spectra are cached per image shape on first use. Thread-safe.
class Detector {
public:
    explicit Detector(DetectionParams params);

    const DetectionParams& params() const noexcept { return params_; }
    const KernelBank& bank() const noexcept { return *bank_; }
    const Convolver& convolver() const noexcept { return convolver_; }

    DetectionResult detect(const Image& img) const;

    /// Convolution, differencing and extrema search on an already
    /// preprocessed image; no pruning. This is the timed region of benchmarks.
    std::vector<Blob> detect_core(const Image& preprocessed) const;

private:
    DetectionParams params_;
    std::shared_ptr<const KernelBank> bank_;
    Convolver convolver_;
};

DetectionResult detect(const Image& img, const DetectionParams& params);

}  // namespace droplet
