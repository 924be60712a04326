#include "droplet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace droplet {

namespace {

// Separate, reproducible streams for geometry and noise from one user seed.
std::mt19937_64 make_engine(std::uint64_t seed, std::uint32_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return std::mt19937_64(seq);
}

double profile(double d, double r, Shading shading)
{
    if (d > r) return 0.0;
    if (shading == Shading::Flat) return 1.0;
    const double t = d / r;
    return std::sqrt(std::max(0.0, 1.0 - t * t));
}

}  // namespace

void draw_disk(Image& img, double cx, double cy, double r, Shading shading, double peak)
{
    if (!(r > 0.0)) throw std::invalid_argument("disk radius must be positive");
    constexpr int kSub = 8;
    constexpr double kHalfDiagonal = 0.70710678118654752;

    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + r + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + r + 1)));

    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            double v;
            if (d + kHalfDiagonal <= r) {
                v = profile(d, r, shading);
            } else if (d - kHalfDiagonal >= r) {
                continue;
            } else {
                double sum = 0.0;
                for (int sy = 0; sy < kSub; ++sy) {
                    for (int sx = 0; sx < kSub; ++sx) {
                        const double px = x - 0.5 + (sx + 0.5) / kSub;
                        const double py = y - 0.5 + (sy + 0.5) / kSub;
                        sum += profile(std::hypot(px - cx, py - cy), r, shading);
                    }
                }
                v = sum / (kSub * kSub);
            }
            float& dst = img(x, y);
            dst = std::max(dst, static_cast<float>(peak * v));
        }
    }
}

Scene render_scene(const RenderOptions& options)
{
    if (options.n_spheres < 0) throw std::invalid_argument("n_spheres must be >= 0");
    if (!(options.r_min > 0.0) || !(options.r_max >= options.r_min)) {
        throw std::invalid_argument("radius range must satisfy 0 < r_min <= r_max");
    }
    if (2.0 * options.r_max > options.width - 1 || 2.0 * options.r_max > options.height - 1) {
        throw std::invalid_argument("largest sphere does not fit inside the image");
    }

    Scene scene;
    scene.image = Image(options.width, options.height, 0.0f);
    scene.seed = options.seed;
    auto rng = make_engine(options.seed, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int i = 0; i < options.n_spheres; ++i) {
        const double r = options.r_min + (options.r_max - options.r_min) * unit(rng);
        bool placed = false;
        for (int attempt = 0; attempt < options.max_attempts && !placed; ++attempt) {
            const double x = r + (options.width - 1 - 2 * r) * unit(rng);
            const double y = r + (options.height - 1 - 2 * r) * unit(rng);
            const bool clear = options.allow_overlap ||
                std::none_of(scene.truths.begin(), scene.truths.end(), [&](const GroundTruthCircle& c) {
                    return std::hypot(c.x - x, c.y - y) <= c.r + r + 2.0;
                });
            if (clear) {
                scene.truths.push_back({x, y, r});
                placed = true;
            }
        }
        if (!placed) {
            throw PlacementError("could not place sphere " + std::to_string(i + 1) + " of " +
                                 std::to_string(options.n_spheres) + " without overlap after " +
                                 std::to_string(options.max_attempts) + " attempts");
        }
    }

    for (const auto& c : scene.truths) draw_disk(scene.image, c.x, c.y, c.r, options.shading, options.peak);
    return scene;
}

Scene add_noise(Scene scene, const NoiseParams& noise, std::uint64_t seed)
{
    if (!(noise.poisson_scale > 0.0)) throw std::invalid_argument("poisson_scale must be positive");
    if (!(noise.gaussian_sigma >= 0.0)) throw std::invalid_argument("gaussian_sigma must be >= 0");

    auto rng = make_engine(seed, 1);
    std::normal_distribution<double> read_noise(0.0, 1.0);
    for (float& v : scene.image.pixels()) {
        const double lambda = noise.poisson_scale * std::max(0.0, static_cast<double>(v));
        double photons = 0.0;
        if (lambda > 0.0) {
            std::poisson_distribution<long long> shot(lambda);
            photons = static_cast<double>(shot(rng));
        }
        double out = photons / noise.poisson_scale;
        if (noise.gaussian_sigma > 0.0) out += noise.gaussian_sigma * read_noise(rng);
        v = static_cast<float>(std::max(0.0, out));
    }
    scene.noise = noise;
    return scene;
}

}  // namespace droplet
