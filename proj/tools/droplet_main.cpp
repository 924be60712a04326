// droplet: command-line front end for detection, scene simulation,
// evaluation, backend parity, scaling benchmarks and the analysis service.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include "droplet/bench.hpp"
#include "droplet/detector.hpp"
#include "droplet/evaluate.hpp"
#include "droplet/formats.hpp"
#include "droplet/image.hpp"
#include "droplet/service.hpp"
#include "droplet/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace droplet;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DetectorFlags {
    DetectionParams params;
    std::string backend = "fft";
    bool no_preprocess = false;
    bool no_prune = false;

    void add_to(CLI::App& cmd, bool require_ladder)
    {
        auto* min_opt = cmd.add_option("--min-sigma", params.min_sigma, "Smallest Gaussian scale");
        auto* max_opt = cmd.add_option("--max-sigma", params.max_sigma, "Largest Gaussian scale");
        auto* bin_opt = cmd.add_option("--n-bin", params.n_bin, "Number of scale bins (kernels - 1)");
        if (require_ladder) {
            min_opt->required();
            max_opt->required();
            bin_opt->required();
        }
        cmd.add_option("--truncate", params.truncate, "Kernel radius in standard deviations")->capture_default_str();
        cmd.add_option("--threshold", params.threshold, "Minimum DoG response")->capture_default_str();
        cmd.add_option("--overlap", params.overlap, "Normalized overlap above which blobs coalesce")
            ->capture_default_str();
        cmd.add_option("--neighborhood", params.neighborhood, "Max-filter extent (odd)")->capture_default_str();
        cmd.add_option("--backend", backend, "Convolution backend")
            ->check(CLI::IsMember({"direct", "fft"}))
            ->capture_default_str();
        cmd.add_option("--smooth-sigma", params.preprocess.smooth_sigma, "Pre-smoothing scale (0 disables)")
            ->capture_default_str();
        cmd.add_option("--saturation", params.preprocess.saturation, "Total saturated fraction for contrast stretch")
            ->capture_default_str();
        cmd.add_flag("--no-preprocess", no_preprocess, "Skip smoothing and contrast stretch");
        cmd.add_flag("--no-prune", no_prune, "Skip overlap pruning");
    }

    DetectionParams resolve() const
    {
        DetectionParams p = params;
        p.backend = parse_backend(backend);
        p.preprocess.enabled = !no_preprocess;
        p.prune = !no_prune;
        try {
            p.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return p;
    }
};

void write_text(const fs::path& path, const std::string& text)
{
    std::vector<std::byte> bytes(text.size());
    std::transform(text.begin(), text.end(), bytes.begin(), [](char c) { return static_cast<std::byte>(c); });
    write_file(path, bytes);
}

std::string read_text(const fs::path& path)
{
    const auto bytes = read_file(path);
    std::string text(bytes.size(), '\0');
    std::transform(bytes.begin(), bytes.end(), text.begin(), [](std::byte b) { return static_cast<char>(b); });
    return text;
}

template <typename T>
std::vector<T> parse_list(const std::string& text)
{
    std::vector<T> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !(is >> std::ws).eof()) throw UsageError("bad list element '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("empty value list");
    return out;
}

bool is_image_file(const fs::path& p)
{
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".raw";
}

HttpService* g_server = nullptr;

extern "C" void on_signal(int)
{
    if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scale-space difference-of-Gaussians droplet detector"};
    app.require_subcommand(1);

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "Detect blobs in one image");
    DetectorFlags detect_flags;
    std::string detect_input;
    std::string detect_json;
    std::string detect_hist;
    std::string detect_name;
    detect_cmd->add_option("--input", detect_input, "PNG, TIFF or raw image")->required();
    detect_flags.add_to(*detect_cmd, true);
    detect_cmd->add_option("--out-json", detect_json, "BlobSet JSON output")->required();
    detect_cmd->add_option("--out-hist", detect_hist, "Radius histogram CSV output");
    detect_cmd->add_option("--name", detect_name, "Image name recorded in the JSON (default: input file name)");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "Render a synthetic droplet scene");
    RenderOptions render;
    NoiseParams noise;
    bool noise_free = false;
    std::uint64_t seed = 0;
    std::string sim_image;
    std::string sim_truth;
    sim_cmd->add_option("--width", render.width)->capture_default_str();
    sim_cmd->add_option("--height", render.height)->capture_default_str();
    sim_cmd->add_option("--n-spheres", render.n_spheres)->capture_default_str();
    sim_cmd->add_option("--r-min", render.r_min)->required();
    sim_cmd->add_option("--r-max", render.r_max)->required();
    sim_cmd->add_option("--seed", seed)->required();
    sim_cmd->add_option("--poisson-scale", noise.poisson_scale)->capture_default_str();
    sim_cmd->add_option("--gaussian-sigma", noise.gaussian_sigma)->capture_default_str();
    sim_cmd->add_flag("--allow-overlap", render.allow_overlap);
    sim_cmd->add_flag("--noise-free", noise_free, "Skip the Poisson/Gaussian noise stage");
    sim_cmd->add_option("--out-image", sim_image, "Output image (.png/.tif 16-bit, otherwise raw float)")->required();
    sim_cmd->add_option("--out-truth", sim_truth, "Ground-truth circles CSV")->required();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Precision/recall of a detection against ground truth");
    std::string eval_pred;
    std::string eval_truth;
    std::string eval_out;
    double iou = 0.5;
    eval_cmd->add_option("--pred", eval_pred, "Detection JSON")->required();
    eval_cmd->add_option("--truth", eval_truth, "Ground-truth CSV")->required();
    eval_cmd->add_option("--iou", iou)->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "EvalReport JSON")->required();

    // parity
    auto* parity_cmd = app.add_subcommand("parity", "Compare two backends over a directory of scenes");
    DetectorFlags parity_flags;
    std::string scenes_dir;
    std::string backend_a = "direct";
    std::string backend_b = "fft";
    std::string parity_out;
    double parity_iou = 0.5;
    parity_cmd->add_option("--scenes", scenes_dir, "Directory of images with <stem>.csv truths")->required();
    parity_cmd->add_option("--backend-a", backend_a)->check(CLI::IsMember({"direct", "fft"}))->capture_default_str();
    parity_cmd->add_option("--backend-b", backend_b)->check(CLI::IsMember({"direct", "fft"}))->capture_default_str();
    parity_cmd->add_option("--iou", parity_iou)->capture_default_str();
    parity_flags.add_to(*parity_cmd, false);
    parity_cmd->add_option("--out", parity_out, "ParityStats CSV")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Runtime scaling sweep");
    DetectorFlags bench_flags;
    bench_flags.params.min_sigma = 1.0;
    bench_flags.params.max_sigma = 10.0;
    bench_flags.params.n_bin = 10;
    std::string sweep;
    std::string values;
    int reps = 5;
    int warmup = 1;
    std::string bench_input;
    std::optional<std::uint64_t> bench_seed;
    int bench_size = 512;
    std::string bench_out;
    bench_cmd->add_option("--sweep", sweep)->check(CLI::IsMember({"n_bin", "max_sigma"}))->required();
    bench_cmd->add_option("--values", values, "Comma-separated sweep values")->required();
    bench_cmd->add_option("--reps", reps, "Timed runs per point (>= 3)")->capture_default_str();
    bench_cmd->add_option("--warmup", warmup, "Untimed runs per point (>= 1)")->capture_default_str();
    auto* in_opt = bench_cmd->add_option("--input", bench_input, "Benchmark image");
    auto* seed_opt = bench_cmd->add_option("--seed", bench_seed, "Synthesize the benchmark scene from this seed");
    in_opt->excludes(seed_opt);
    bench_cmd->add_option("--size", bench_size, "Synthetic scene edge length")->capture_default_str();
    bench_flags.add_to(*bench_cmd, false);
    bench_cmd->add_option("--out", bench_out, "BenchRecord CSV")->required();

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP analysis service");
    DetectorFlags serve_flags;
    std::string listen = "127.0.0.1:8080";
    ServiceConfig service_config;
    serve_cmd->add_option("--listen", listen, "HOST:PORT")->envname("DROPLET_LISTEN")->capture_default_str();
    serve_cmd->add_option("--workers", service_config.workers)->envname("DROPLET_WORKERS")->capture_default_str();
    serve_cmd->add_option("--backlog", service_config.backlog)->capture_default_str();
    serve_cmd->add_option("--max-request-bytes", service_config.max_request_bytes)->capture_default_str();
    serve_cmd->add_option("--timeout-ms", service_config.request_timeout_ms)->capture_default_str();
    serve_cmd->add_option("--cache-size", service_config.detector_cache_size)->capture_default_str();
    serve_flags.add_to(*serve_cmd, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*detect_cmd) {
            const auto params = detect_flags.resolve();
            const Image img = load_image(detect_input);
            const auto result = Detector(params).detect(img);
            const std::string name = detect_name.empty() ? fs::path(detect_input).filename().string() : detect_name;
            write_text(detect_json, render_json(detection_to_json(result, name, true)));
            if (!detect_hist.empty()) write_text(detect_hist, histogram_csv(result.histogram));
            std::cerr << result.blobs.blobs.size() << " blobs\n";
        } else if (*sim_cmd) {
            render.seed = seed;
            Scene scene = render_scene(render);
            if (!noise_free) scene = add_noise(std::move(scene), noise, seed);
            write_image(sim_image, scene.image);
            write_text(sim_truth, truths_csv(scene.truths, seed));
        } else if (*eval_cmd) {
            const auto doc = Json::parse(read_text(eval_pred));
            const auto preds = blobs_from_json(doc);
            const auto truths = truths_from_csv(read_text(eval_truth));
            write_text(eval_out, render_json(eval_to_json(match_voc(preds, truths, iou))));
        } else if (*parity_cmd) {
            auto params_a = parity_flags.resolve();
            auto params_b = params_a;
            params_a.backend = parse_backend(backend_a);
            params_b.backend = parse_backend(backend_b);
            std::vector<fs::path> images;
            for (const auto& entry : fs::directory_iterator(scenes_dir)) {
                if (entry.is_regular_file() && is_image_file(entry.path())) images.push_back(entry.path());
            }
            std::sort(images.begin(), images.end());
            if (images.empty()) throw UsageError("no images found in " + scenes_dir);
            std::vector<ParityCase> cases;
            for (const auto& path : images) {
                auto truth_path = path;
                truth_path.replace_extension(".csv");
                if (!fs::exists(truth_path)) throw std::runtime_error("missing truth file " + truth_path.string());
                cases.push_back({path.filename().string(), load_image(path), truths_from_csv(read_text(truth_path))});
            }
            const auto stats = parity(cases, params_a, params_b, parity_iou);
            write_text(parity_out, parity_csv(stats));
        } else if (*bench_cmd) {
            auto fixed = bench_flags.resolve();
            Image img;
            if (!bench_input.empty()) {
                img = load_image(bench_input);
            } else if (bench_seed) {
                RenderOptions opts;
                opts.width = opts.height = bench_size;
                opts.n_spheres = std::max(1, bench_size * bench_size / 10000);
                opts.r_min = 3.0;
                opts.r_max = std::min(25.0, bench_size / 8.0);
                opts.seed = *bench_seed;
                img = add_noise(render_scene(opts), NoiseParams{}, *bench_seed).image;
            } else {
                throw UsageError("bench needs --input or --seed");
            }
            std::vector<BenchRecord> records;
            const auto backend = parse_backend(bench_flags.backend);
            if (sweep == "n_bin") {
                records = sweep_n_bin(backend, parse_list<int>(values), fixed, img, reps, warmup);
            } else {
                records = sweep_max_sigma(backend, parse_list<double>(values), fixed, img, reps, warmup);
            }
            write_text(bench_out, bench_csv(records, probe_hardware()));
        } else if (*serve_cmd) {
            service_config.params = serve_flags.resolve();
            std::tie(service_config.host, service_config.port) = parse_listen_address(listen);
            HttpService server(service_config);
            const int port = server.bind();
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << service_config.host << ":" << port << std::endl;
            server.serve();
            g_server = nullptr;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return 0;
}
