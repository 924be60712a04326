#pragma once

#include "droplet/raster.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace droplet {

struct GroundTruthCircle {
    double x = 0.0;
    double y = 0.0;
    double r = 0.0;

    friend bool operator==(const GroundTruthCircle&, const GroundTruthCircle&) = default;
};

enum class Shading {
    SphereCap,  // v0 * sqrt(1 - (d/r)^2)
    Flat,       // v0 inside the disk
};

struct NoiseParams {
    double poisson_scale = 255.0;   // photons per unit intensity
    double gaussian_sigma = 0.01;   // read noise, intensity units
};

struct Scene {
    Image image;
    std::vector<GroundTruthCircle> truths;
    std::uint64_t seed = 0;
    NoiseParams noise{0.0, 0.0};  // zeros until add_noise runs
};

struct RenderOptions {
    int width = 1000;
    int height = 1000;
    int n_spheres = 100;
    double r_min = 3.0;
    double r_max = 25.0;
    std::uint64_t seed = 0;
    bool allow_overlap = false;
    Shading shading = Shading::SphereCap;
    double peak = 1.0;
    /// Rejection-sampling attempts per sphere before giving up.
    int max_attempts = 10000;
};

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Noise-free scene. Centers are uniform over positions that keep every disk
/// inside the image; without overlap, pairs satisfy d > r_i + r_j + 2.
Scene render_scene(const RenderOptions& options);

/// Draws one disk into an image, antialiased by 8x8 supersampling of pixels
/// that straddle the rim. Overlapping disks combine by maximum.
void draw_disk(Image& img, double cx, double cy, double r, Shading shading, double peak = 1.0);

/// Poisson(poisson_scale * v) / poisson_scale, then additive N(0, gaussian_sigma),
/// clamped at zero. Deterministic in seed.
Scene add_noise(Scene scene, const NoiseParams& noise, std::uint64_t seed);

}  // namespace droplet
