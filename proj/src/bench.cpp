#include "droplet/bench.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace droplet {

HardwareInfo probe_hardware()
{
    HardwareInfo info;
    info.logical_cpus = std::thread::hardware_concurrency();
    info.worker_threads = omp_get_max_threads();
    std::ifstream cpuinfo("/proc/cpuinfo");
    for (std::string line; std::getline(cpuinfo, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) info.cpu_model = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    if (info.cpu_model.empty()) info.cpu_model = "unknown";
#if defined(__clang__)
    info.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
    info.compiler = "gcc " __VERSION__;
#else
    info.compiler = "unknown";
#endif
    return info;
}

double percentile(std::vector<double> samples, double q)
{
    if (samples.empty()) throw std::invalid_argument("percentile of no samples");
    std::sort(samples.begin(), samples.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

BenchRecord time_detection(const Detector& detector, const Image& preprocessed, int timed_runs, int warmup)
{
    if (timed_runs < 3) throw std::invalid_argument("benchmarks need at least 3 timed runs");
    if (warmup < 1) throw std::invalid_argument("benchmarks need at least 1 warmup run");

    using Clock = std::chrono::steady_clock;
    std::size_t sink = 0;
    for (int i = 0; i < warmup; ++i) sink += detector.detect_core(preprocessed).size();

    BenchRecord record;
    const auto& params = detector.params();
    record.backend = params.backend;
    record.n_bin = params.n_bin;
    record.min_sigma = params.min_sigma;
    record.max_sigma = params.max_sigma;
    record.width = preprocessed.width();
    record.height = preprocessed.height();
    record.warmup_runs = warmup;
    record.timed_runs = timed_runs;
    for (int i = 0; i < timed_runs; ++i) {
        const auto t0 = Clock::now();
        sink += detector.detect_core(preprocessed).size();
        record.samples_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    record.median_ms = percentile(record.samples_ms, 0.5);
    record.p10_ms = percentile(record.samples_ms, 0.1);
    record.p90_ms = percentile(record.samples_ms, 0.9);
    // Keeps the detection results observable so the calls are not elided.
    if (sink == static_cast<std::size_t>(-1)) record.median_ms = -1.0;
    return record;
}

namespace {

Image prepare(const Image& img, const DetectionParams& fixed)
{
    return fixed.preprocess.enabled ? preprocess(img, fixed.preprocess) : img;
}

}  // namespace

std::vector<BenchRecord> sweep_n_bin(Backend backend, std::span<const int> n_bins, const DetectionParams& fixed,
                                     const Image& img, int reps, int warmup)
{
    const Image prepared = prepare(img, fixed);
    std::vector<BenchRecord> records;
    for (int n_bin : n_bins) {
        DetectionParams params = fixed;
        params.backend = backend;
        params.n_bin = n_bin;
        params.prune = false;
        records.push_back(time_detection(Detector(params), prepared, reps, warmup));
    }
    return records;
}

std::vector<BenchRecord> sweep_max_sigma(Backend backend, std::span<const double> max_sigmas,
                                         const DetectionParams& fixed, const Image& img, int reps, int warmup)
{
    const Image prepared = prepare(img, fixed);
    std::vector<BenchRecord> records;
    for (double max_sigma : max_sigmas) {
        DetectionParams params = fixed;
        params.backend = backend;
        params.max_sigma = max_sigma;
        params.prune = false;
        records.push_back(time_detection(Detector(params), prepared, reps, warmup));
    }
    return records;
}

}  // namespace droplet
