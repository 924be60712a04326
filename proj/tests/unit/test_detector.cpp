#include "droplet/detector.hpp"
#include "droplet/synth.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace droplet;

namespace {

// Hard-edged disk: pixels whose center lies within r.
Image disk_image(int w, int h, std::vector<std::array<double, 3>> disks, float value = 1.0f)
{
    Image img(w, h, 0.0f);
    for (const auto& [cx, cy, r] : disks) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (std::hypot(x - cx, y - cy) <= r) img(x, y) = value;
            }
        }
    }
    return img;
}

// sigma * (G_sigma - G_next) * img evaluated at one pixel by direct summation.
double dog_at(const Image& img, int x, int y, double sigma, double next, double truncate)
{
    auto blur = [&](double s) {
        const int r = static_cast<int>(std::ceil(truncate * s - 1e-9));
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                acc += testing::sampled_gaussian(s, r, dx, dy) *
                       img(reflect_index(x - dx, img.width()), reflect_index(y - dy, img.height()));
            }
        }
        return acc;
    };
    return sigma * (blur(sigma) - blur(next));
}

DoGStack dog_of(const Image& img, const SigmaLadder& ladder, Backend backend = Backend::Fft)
{
    const KernelBank bank(ladder, 5.0);
    return dog_stack(convolve_bank<double>(img, bank, backend), ladder);
}

DoGStack manual_stack(int w, int h, int n, std::vector<double> sigmas)
{
    DoGStack dog;
    dog.width = w;
    dog.height = h;
    for (int i = 0; i < n; ++i) dog.slices.emplace_back(w, h, 0.0f);
    dog.sigmas = std::move(sigmas);
    return dog;
}

DetectionParams raw_params(double min_sigma, double max_sigma, int n_bin)
{
    DetectionParams p;
    p.min_sigma = min_sigma;
    p.max_sigma = max_sigma;
    p.n_bin = n_bin;
    p.preprocess.enabled = false;
    return p;
}

}  // namespace

TEST_CASE("params validation")
{
    DetectionParams p;
    CHECK_NOTHROW(p.validate());
    p.neighborhood = 4;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = {};
    p.overlap = 1.5;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = {};
    p.min_sigma = p.max_sigma;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = {};
    p.preprocess.saturation = 0.5;
    CHECK_THROWS_AS(Detector{p}, std::invalid_argument);
}

TEST_CASE("DoG of a constant image is zero")
{
    const SigmaLadder ladder(1.0, 3.0, 4);
    const auto dog = dog_of(Image(30, 20, 0.8f), ladder);
    REQUIRE(dog.n_slices() == 4);
    for (const auto& s : dog.slices) {
        for (float v : s.pixels()) CHECK(std::abs(v) < 1e-6);
    }
}

TEST_CASE("DoG of an impulse: positive center, negative annulus")
{
    const SigmaLadder ladder(1.0, 2.0, 1);
    const auto img = testing::impulse_image(41, 41);
    const auto dog = dog_of(img, ladder);
    REQUIRE(dog.n_slices() == 1);
    const auto& s = dog.slices[0];
    const double expect = 1.0 * (testing::sampled_gaussian(1.0, 5, 0, 0) - testing::sampled_gaussian(2.0, 10, 0, 0));
    CHECK(s(20, 20) == doctest::Approx(expect).epsilon(1e-5));
    CHECK(s(20, 20) > 0.0f);
    CHECK(s(23, 20) < 0.0f);
    CHECK(s(20, 24) < 0.0f);
}

TEST_CASE("DoG slices match direct per-pixel summation")
{
    const SigmaLadder ladder(1.5, 4.5, 3);
    const auto img = testing::random_image(33, 27, 12);
    const auto dog = dog_of(img, ladder, Backend::Direct);
    for (std::size_t i = 0; i < dog.n_slices(); ++i) {
        for (auto [x, y] : {std::pair{0, 0}, std::pair{16, 13}, std::pair{32, 26}, std::pair{5, 20}}) {
            CHECK(dog.slices[i](x, y) ==
                  doctest::Approx(dog_at(img, x, y, ladder.sigma(i), ladder.sigma(i + 1), 5.0)).epsilon(1e-5).scale(1e-6));
        }
    }
}

TEST_CASE("DoG is linear in the image")
{
    const SigmaLadder ladder(1.0, 4.0, 3);
    const auto f = testing::random_image(40, 40, 1);
    const auto g = testing::random_image(40, 40, 2);
    Image combo(40, 40);
    for (std::size_t k = 0; k < combo.size(); ++k) combo.pixels()[k] = 3.0f * f.pixels()[k] + g.pixels()[k];
    const auto df = dog_of(f, ladder);
    const auto dg = dog_of(g, ladder);
    const auto dc = dog_of(combo, ladder);
    for (std::size_t i = 0; i < dc.n_slices(); ++i) {
        for (std::size_t k = 0; k < combo.size(); ++k) {
            // Slices are stored in single precision.
            CHECK(std::abs(dc.slices[i].pixels()[k] - (3.0 * df.slices[i].pixels()[k] + dg.slices[i].pixels()[k])) < 1e-6);
        }
    }
}

TEST_CASE("no extrema in a flat or empty response")
{
    const SigmaLadder ladder(1.0, 3.0, 2);
    CHECK(find_extrema(dog_of(Image(30, 30, 0.0f), ladder), 0.1).empty());
    CHECK(find_extrema(dog_of(Image(30, 30, 0.5f), ladder), 0.1).empty());
    CHECK_THROWS_AS(find_extrema(dog_of(Image(8, 8, 0.0f), ladder), 0.1, 2), std::invalid_argument);
}

TEST_CASE("single disk: detected scale matches a brute-force scan of the center response")
{
    const SigmaLadder ladder(4.0, 10.0, 12);
    const auto img = disk_image(96, 96, {{48.0, 48.0, 10.0}});
    const auto dog = dog_of(img, ladder);
    const auto blobs = find_extrema(dog, 0.1);
    REQUIRE(blobs.size() == 1);
    CHECK(blobs[0].x == 48);
    CHECK(blobs[0].y == 48);

    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t i = 0; i < dog.n_slices(); ++i) {
        const double v = dog_at(img, 48, 48, ladder.sigma(i), ladder.sigma(i + 1), 5.0);
        if (v > best_v) {
            best_v = v;
            best = i;
        }
    }
    CHECK(blobs[0].sigma == ladder.sigma(best));
    CHECK(blobs[0].response == doctest::Approx(best_v).epsilon(1e-4));
    CHECK(std::abs(blobs[0].radius - 10.0) <= kSqrt2 * ladder.delta_sigma() + 1.0);
    CHECK_FALSE(blobs[0].at_scale_boundary);
}

TEST_CASE("two separated disks give two blobs at their centers")
{
    const SigmaLadder ladder(2.0, 10.0, 16);
    const auto img = disk_image(128, 80, {{30.0, 40.0, 6.0}, {90.0, 40.0, 11.0}});
    auto blobs = find_extrema(dog_of(img, ladder), 0.1);
    REQUIRE(blobs.size() == 2);
    sort_by_response(blobs);
    std::sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) { return a.x < b.x; });
    CHECK(blobs[0].x == 30);
    CHECK(blobs[1].x == 90);
    CHECK(blobs[0].radius < blobs[1].radius);
    CHECK(std::abs(blobs[0].radius - 6.0) < 1.5);
    CHECK(std::abs(blobs[1].radius - 11.0) < 1.5);
}

TEST_CASE("the projected search agrees with the 3-D search on isolated disks")
{
    const SigmaLadder ladder(2.0, 10.0, 16);
    for (double r : {4.0, 7.0, 12.0}) {
        const auto img = disk_image(80, 80, {{40.0, 40.0, r}});
        const auto dog = dog_of(img, ladder);
        const auto a = find_extrema(dog, 0.1);
        const auto b = find_extrema_projected(dog, 0.1);
        REQUIRE(a.size() == 1);
        REQUIRE(b.size() == 1);
        CHECK(a[0] == b[0]);
    }
}

TEST_CASE("dark disks on a bright field are not detected")
{
    const SigmaLadder ladder(2.0, 10.0, 16);
    auto img = disk_image(80, 80, {{40.0, 40.0, 8.0}});
    for (float& v : img.pixels()) v = 1.0f - v;
    CHECK(find_extrema(dog_of(img, ladder), 0.1).empty());
}

TEST_CASE("plateaus collapse to the member nearest the centroid")
{
    auto dog = manual_stack(10, 10, 1, {2.0});
    for (int y = 4; y <= 5; ++y) {
        for (int x = 4; x <= 5; ++x) dog.slices[0](x, y) = 1.0f;
    }
    const auto blobs = find_extrema(dog, 0.1);
    REQUIRE(blobs.size() == 1);
    CHECK(blobs[0].x == 4);
    CHECK(blobs[0].y == 4);
    CHECK(blobs[0].at_scale_boundary);

    auto line = manual_stack(12, 5, 1, {2.0});
    for (int x = 2; x <= 8; ++x) line.slices[0](x, 2) = 0.7f;
    const auto mid = find_extrema(line, 0.1);
    REQUIRE(mid.size() == 1);
    CHECK(mid[0].x == 5);
    CHECK(mid[0].y == 2);
    CHECK(mid[0].response == doctest::Approx(0.7));
}

TEST_CASE("equal maxima at one pixel on neighboring scales stay separate")
{
    auto dog = manual_stack(9, 9, 3, {1.0, 2.0, 3.0});
    dog.slices[1](4, 4) = 0.5f;
    dog.slices[2](4, 4) = 0.5f;
    const auto blobs = find_extrema(dog, 0.1);
    REQUIRE(blobs.size() == 2);
    CHECK_FALSE(blobs[0].at_scale_boundary);
    CHECK(blobs[1].at_scale_boundary);
}

TEST_CASE("extrema obey the threshold strictly and handle image borders")
{
    auto dog = manual_stack(6, 6, 2, {1.0, 2.0});
    dog.slices[0](0, 0) = 0.3f;
    dog.slices[1](5, 5) = 0.25f;
    const auto blobs = find_extrema(dog, 0.25);
    REQUIRE(blobs.size() == 1);
    CHECK(blobs[0].x == 0);
    CHECK(blobs[0].sigma == 1.0);
    CHECK(find_extrema(dog, 0.2).size() == 2);
}

TEST_CASE("larger neighborhoods suppress nearby weaker peaks")
{
    auto dog = manual_stack(20, 20, 1, {2.0});
    dog.slices[0](5, 5) = 1.0f;
    dog.slices[0](8, 5) = 0.8f;
    CHECK(find_extrema(dog, 0.1, 3).size() == 2);
    CHECK(find_extrema(dog, 0.1, 7).size() == 1);
}

TEST_CASE("normalized overlap matches a Monte-Carlo oracle")
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> pos(-10.0, 10.0);
    std::uniform_real_distribution<double> rad(1.0, 8.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int pair = 0; pair < 12; ++pair) {
        const double x1 = 0.0, y1 = 0.0, r1 = rad(rng);
        const double x2 = pos(rng) * 0.8, y2 = pos(rng) * 0.8, r2 = rad(rng);
        // Sample the smaller disk uniformly and count hits in the other.
        const bool first_small = r1 <= r2;
        const double sx = first_small ? x1 : x2, sy = first_small ? y1 : y2, sr = std::min(r1, r2);
        const double ox = first_small ? x2 : x1, oy = first_small ? y2 : y1, orr = std::max(r1, r2);
        const int n = 1'000'000;
        int hits = 0;
        for (int i = 0; i < n; ++i) {
            const double rr = sr * std::sqrt(unit(rng));
            const double th = 2.0 * std::numbers::pi * unit(rng);
            const double px = sx + rr * std::cos(th), py = sy + rr * std::sin(th);
            if ((px - ox) * (px - ox) + (py - oy) * (py - oy) <= orr * orr) ++hits;
        }
        const double mc = static_cast<double>(hits) / n;
        CHECK(normalized_overlap(x1, y1, r1, x2, y2, r2) == doctest::Approx(mc).scale(1.0).epsilon(3e-3));
        CHECK(normalized_overlap(x1, y1, r1, x2, y2, r2) ==
              doctest::Approx(normalized_overlap(x2, y2, r2, x1, y1, r1)).epsilon(1e-12));
    }
}

TEST_CASE("normalized overlap limits")
{
    CHECK(normalized_overlap(0, 0, 3, 10, 0, 3) == 0.0);
    CHECK(normalized_overlap(0, 0, 3, 6, 0, 3) == 0.0);
    CHECK(normalized_overlap(0, 0, 5, 1, 0, 2) == 1.0);
    CHECK(normalized_overlap(0, 0, 4, 0, 0, 4) == 1.0);
    // Equal unit disks at distance 1: lens area 2*acos(1/2) - sqrt(3)/2.
    CHECK(normalized_overlap(0, 0, 1, 1, 0, 1) ==
          doctest::Approx((2.0 * std::acos(0.5) - std::sqrt(3.0) / 2.0) / std::numbers::pi));
    CHECK_THROWS_AS(normalized_overlap(0, 0, 0, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("prune merges overlapping blobs into the stronger one")
{
    std::vector<Blob> blobs{make_blob(10, 10, 4.0, 0.3), make_blob(11, 10, 2.0, 0.5), make_blob(50, 50, 3.0, 0.2)};
    const auto kept = prune_overlaps(blobs, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].x == 11);
    CHECK(kept[0].response == 0.5);
    CHECK(kept[0].radius == doctest::Approx(0.5 * kSqrt2 * (4.0 + 2.0)));
    CHECK(kept[0].sigma == doctest::Approx(3.0));
    CHECK(kept[1].x == 50);

    // Overlap exactly at the threshold is kept apart.
    const std::vector<Blob> touching{make_blob(0, 0, 1.0, 0.4), make_blob(100, 0, 1.0, 0.3)};
    CHECK(prune_overlaps(touching, 0.0).size() == 2);
    CHECK(prune_overlaps({}, 0.5).empty());
    CHECK_THROWS_AS(prune_overlaps(touching, 1.1), std::invalid_argument);
}

TEST_CASE("prune properties on random blob sets")
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pos(0, 60);
    std::uniform_real_distribution<double> sig(1.0, 6.0);
    std::uniform_real_distribution<double> resp(0.1, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Blob> blobs;
        const int n = 1 + trial % 30;
        for (int i = 0; i < n; ++i) blobs.push_back(make_blob(pos(rng), pos(rng), sig(rng), resp(rng)));
        const double thr = (trial % 5) * 0.2;
        const auto kept = prune_overlaps(blobs, thr);
        CHECK(kept.size() <= blobs.size());
        CHECK_FALSE(kept.empty());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (i > 0) CHECK(kept[i - 1].response >= kept[i].response);
            CHECK(std::any_of(blobs.begin(), blobs.end(), [&](const Blob& b) {
                return b.x == kept[i].x && b.y == kept[i].y && b.response == kept[i].response;
            }));
            for (std::size_t j = i + 1; j < kept.size(); ++j) {
                CHECK(normalized_overlap(kept[i].x, kept[i].y, kept[i].radius, kept[j].x, kept[j].y, kept[j].radius) <=
                      thr);
            }
        }
        // Stable under a second pass.
        CHECK(prune_overlaps(kept, thr) == kept);
    }
}

TEST_CASE("histogram binning and volume weights")
{
    const SigmaLadder ladder(1.0, 3.0, 2);
    const std::vector<Blob> blobs{
        make_blob(0, 0, 1.0, 1.0),
        make_blob(0, 0, 1.5, 1.0),  // midpoint between the first two bins: lower bin
        make_blob(0, 0, 1.51, 1.0),
        make_blob(0, 0, 9.0, 1.0),  // beyond the ladder: last bin
        make_blob(0, 0, 0.2, 1.0),
    };
    const auto hist = histogram(blobs, ladder);
    REQUIRE(hist.bin_centers.size() == 3);
    CHECK(hist.bin_centers[1] == doctest::Approx(2.0 * kSqrt2));
    CHECK(hist.counts == std::vector<std::size_t>{3, 1, 1});
    const auto vol = [](double sigma) { return 4.0 / 3.0 * std::numbers::pi * std::pow(kSqrt2 * sigma, 3); };
    CHECK(hist.volume_weights[0] == doctest::Approx(vol(1.0) + vol(1.5) + vol(0.2)));
    CHECK(hist.volume_weights[1] == doctest::Approx(vol(1.51)));
    CHECK(hist.volume_weights[2] == doctest::Approx(vol(9.0)));

    const auto empty = histogram({}, ladder);
    CHECK(empty.counts == std::vector<std::size_t>{0, 0, 0});
}

TEST_CASE("LoG reference: zero on constants, scale peak near r / sqrt(2)")
{
    for (double v : log_reference_response(Image(20, 20, 0.6f), 2.0).pixels()) CHECK(std::abs(v) < 1e-5);

    const double r = 8.0;
    const auto img = disk_image(80, 80, {{40.0, 40.0, r}});
    double best_sigma = 0.0, best = -1.0;
    for (double s = 2.0; s <= 10.0; s += 0.25) {
        const double v = -log_reference_response(img, s)(40, 40);
        if (v > best) {
            best = v;
            best_sigma = s;
        }
    }
    CHECK(std::abs(best_sigma - r / kSqrt2) <= 0.5);
}

TEST_CASE("DoG extremum agrees with the LoG extremum location and scale")
{
    const SigmaLadder ladder(2.0, 10.0, 32);
    for (double r : {5.0, 9.0}) {
        const auto img = disk_image(80, 80, {{37.0, 42.0, r}});
        const auto blobs = find_extrema(dog_of(img, ladder), 0.1);
        REQUIRE(blobs.size() == 1);
        double best_sigma = 0.0, best = -1.0;
        int bx = 0, by = 0;
        for (double s : ladder.sigmas()) {
            const auto log = log_reference_response(img, s + 0.5 * ladder.delta_sigma());
            for (int y = 0; y < 80; ++y) {
                for (int x = 0; x < 80; ++x) {
                    if (-log(x, y) > best) {
                        best = -log(x, y);
                        best_sigma = s;
                        bx = x;
                        by = y;
                    }
                }
            }
        }
        CHECK(blobs[0].x == bx);
        CHECK(blobs[0].y == by);
        CHECK(std::abs(blobs[0].sigma - best_sigma) <= ladder.delta_sigma() + 1e-9);
    }
}

TEST_CASE("detector on a blank frame finds nothing")
{
    const auto result = detect(Image(100, 100, 0.0f), DetectionParams{});
    CHECK(result.blobs.blobs.empty());
    CHECK(result.blobs.width == 100);
    CHECK(result.histogram.counts.size() == 25);
    CHECK(std::all_of(result.histogram.counts.begin(), result.histogram.counts.end(), [](auto c) { return c == 0; }));
    CHECK_THROWS_AS(detect(Image(4, 4, std::nanf("")), DetectionParams{}), std::invalid_argument);
}

TEST_CASE("direct and FFT detectors agree on a synthetic scene")
{
    RenderOptions opts;
    opts.width = opts.height = 200;
    opts.n_spheres = 12;
    opts.r_min = 3.0;
    opts.r_max = 12.0;
    opts.seed = 3;
    const auto scene = add_noise(render_scene(opts), NoiseParams{}, 3);
    DetectionParams p;
    p.min_sigma = 2.0;
    p.max_sigma = 10.0;
    p.n_bin = 16;
    p.backend = Backend::Direct;
    const auto a = detect(scene.image, p).blobs.blobs;
    p.backend = Backend::Fft;
    const auto b = detect(scene.image, p).blobs.blobs;
    REQUIRE(a.size() == b.size());
    CHECK(a.size() >= 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        CHECK(a[i].sigma == b[i].sigma);
        CHECK(a[i].response == doctest::Approx(b[i].response).epsilon(1e-4));
    }
}

TEST_CASE("detector reports ordered results, timings and reuses spectra")
{
    const auto img = disk_image(120, 120, {{30.0, 30.0, 6.0}, {80.0, 70.0, 9.0}}, 0.9f);
    const Detector det(raw_params(2.0, 10.0, 16));
    const auto r1 = det.detect(img);
    const auto r2 = det.detect(img);
    REQUIRE(r1.blobs.blobs.size() == 2);
    CHECK(r1.blobs.blobs == r2.blobs.blobs);
    CHECK(r1.blobs.blobs[0].response >= r1.blobs.blobs[1].response);
    CHECK(det.convolver().cached_shapes() == 1);
    CHECK(r1.timings.convolve_ms > 0.0);
    CHECK(r1.blobs.params == det.params());
    std::size_t total = 0;
    for (auto c : r1.histogram.counts) total += c;
    CHECK(total == 2);
}
