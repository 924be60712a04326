#pragma once

#include "droplet/detector.hpp"

#include <span>
#include <string>
#include <vector>

namespace droplet {

struct HardwareInfo {
    std::string cpu_model;
    unsigned logical_cpus = 0;
    int worker_threads = 1;
    std::string compiler;
};

HardwareInfo probe_hardware();

struct BenchRecord {
    Backend backend = Backend::Fft;
    int n_bin = 0;
    double min_sigma = 0.0;
    double max_sigma = 0.0;
    int width = 0;
    int height = 0;
    int warmup_runs = 0;
    int timed_runs = 0;
    double median_ms = 0.0;
    double p10_ms = 0.0;
    double p90_ms = 0.0;
    std::vector<double> samples_ms;
};

/// Linear-interpolated percentile, q in [0, 1].
double percentile(std::vector<double> samples, double q);

/// Times Detector::detect_core (convolution, differencing, extrema; no I/O,
/// no preprocessing, no pruning). Warmup runs populate caches and are
/// excluded from the statistics. Requires timed_runs >= 3 and warmup >= 1.
BenchRecord time_detection(const Detector& detector, const Image& preprocessed, int timed_runs, int warmup = 1);

/// One record per n_bin value; `fixed` supplies every other parameter.
std::vector<BenchRecord> sweep_n_bin(Backend backend, std::span<const int> n_bins, const DetectionParams& fixed,
                                     const Image& img, int reps, int warmup = 1);

std::vector<BenchRecord> sweep_max_sigma(Backend backend, std::span<const double> max_sigmas,
                                         const DetectionParams& fixed, const Image& img, int reps, int warmup = 1);

}  // namespace droplet
