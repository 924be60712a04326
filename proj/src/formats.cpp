#include "droplet/formats.hpp"

#include <charconv>
#include <sstream>

namespace droplet {

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string render_json(const Json& doc)
{
    return doc.dump(2) + "\n";
}

Json params_to_json(const DetectionParams& p)
{
    return Json{
        {"min_sigma", p.min_sigma},
        {"max_sigma", p.max_sigma},
        {"n_bin", p.n_bin},
        {"truncate", p.truncate},
        {"threshold", p.threshold},
        {"overlap", p.overlap},
        {"neighborhood", p.neighborhood},
        {"backend", std::string(to_string(p.backend))},
        {"prune", p.prune},
        {"preprocess",
         {{"enabled", p.preprocess.enabled},
          {"smooth_sigma", p.preprocess.smooth_sigma},
          {"saturation", p.preprocess.saturation}}},
    };
}

Json detection_to_json(const DetectionResult& result, std::string_view image_name, bool include_timing)
{
    Json blobs = Json::array();
    for (const Blob& b : result.blobs.blobs) {
        blobs.push_back({{"x", b.x},
                         {"y", b.y},
                         {"sigma", b.sigma},
                         {"radius", b.radius},
                         {"response", b.response},
                         {"at_scale_boundary", b.at_scale_boundary}});
    }
    Json doc{
        {"image", std::string(image_name)},
        {"width", result.blobs.width},
        {"height", result.blobs.height},
        {"params", params_to_json(result.blobs.params)},
        {"blobs", std::move(blobs)},
        {"histogram",
         {{"bin_centers", result.histogram.bin_centers},
          {"counts", result.histogram.counts},
          {"volume_weights", result.histogram.volume_weights}}},
    };
    if (include_timing) {
        doc["timing"] = {{"preprocess_ms", result.timings.preprocess_ms},
                         {"convolve_ms", result.timings.convolve_ms},
                         {"extrema_ms", result.timings.extrema_ms},
                         {"prune_ms", result.timings.prune_ms}};
    }
    return doc;
}

std::vector<Blob> blobs_from_json(const Json& doc)
{
    if (!doc.is_object() || !doc.contains("blobs") || !doc["blobs"].is_array()) {
        throw FormatError("detection document has no \"blobs\" array");
    }
    std::vector<Blob> blobs;
    try {
        for (const auto& item : doc["blobs"]) {
            Blob b;
            b.x = item.at("x").get<int>();
            b.y = item.at("y").get<int>();
            b.sigma = item.at("sigma").get<double>();
            b.radius = item.contains("radius") ? item["radius"].get<double>() : kSqrt2 * b.sigma;
            b.response = item.at("response").get<double>();
            b.at_scale_boundary = item.value("at_scale_boundary", false);
            blobs.push_back(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed blob entry: ") + e.what());
    }
    return blobs;
}

std::string histogram_csv(const RadiusHistogram& hist)
{
    std::ostringstream out;
    out << "bin_center_px,count,volume_weight\n";
    for (std::size_t k = 0; k < hist.bin_centers.size(); ++k) {
        out << format_double(hist.bin_centers[k]) << ',' << hist.counts[k] << ','
            << format_double(hist.volume_weights[k]) << '\n';
    }
    return out.str();
}

std::string truths_csv(std::span<const GroundTruthCircle> truths, std::uint64_t seed)
{
    std::ostringstream out;
    out << "# seed=" << seed << "\nx,y,r\n";
    for (const auto& c : truths) {
        out << format_double(c.x) << ',' << format_double(c.y) << ',' << format_double(c.r) << '\n';
    }
    return out.str();
}

std::vector<GroundTruthCircle> truths_from_csv(std::string_view text)
{
    std::vector<GroundTruthCircle> truths;
    std::istringstream in{std::string(text)};
    int line_no = 0;
    bool header_seen = false;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "x,y,r") throw FormatError("truth CSV: expected header x,y,r");
            header_seen = true;
            continue;
        }
        GroundTruthCircle c;
        double* fields[3] = {&c.x, &c.y, &c.r};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int f = 0; f < 3; ++f) {
            const auto res = std::from_chars(p, end, *fields[f]);
            if (res.ec != std::errc{}) throw FormatError("truth CSV: bad number on line " + std::to_string(line_no));
            p = res.ptr;
            if (f < 2) {
                if (p == end || *p != ',') throw FormatError("truth CSV: expected 3 fields on line " + std::to_string(line_no));
                ++p;
            }
        }
        if (p != end) throw FormatError("truth CSV: trailing data on line " + std::to_string(line_no));
        if (!(c.r > 0.0)) throw FormatError("truth CSV: non-positive radius on line " + std::to_string(line_no));
        truths.push_back(c);
    }
    if (!header_seen) throw FormatError("truth CSV: missing header");
    return truths;
}

Json eval_to_json(const EvalReport& report)
{
    Json matches = Json::array();
    for (const auto& m : report.matches) matches.push_back({{"pred", m.pred}, {"truth", m.truth}, {"iou", m.iou}});
    return Json{{"tp", report.tp},
                {"fp", report.fp},
                {"fn", report.fn},
                {"precision", report.precision},
                {"recall", report.recall},
                {"iou_threshold", report.iou_threshold},
                {"matches", std::move(matches)}};
}

std::string parity_csv(const ParityStats& stats)
{
    std::ostringstream out;
    out << "image,precision_a,recall_a,precision_b,recall_b,dp,dr\n";
    for (const auto& r : stats.rows) {
        out << r.image << ',' << format_double(r.precision_a) << ',' << format_double(r.recall_a) << ','
            << format_double(r.precision_b) << ',' << format_double(r.recall_b) << ',' << format_double(r.dp)
            << ',' << format_double(r.dr) << '\n';
    }
    out << "# images=" << stats.rows.size() << " identical=" << stats.identical << '\n';
    out << "# mean_dp=" << format_double(stats.mean_dp) << " std_dp=" << format_double(stats.std_dp)
        << " mean_abs_dp=" << format_double(stats.mean_abs_dp) << '\n';
    out << "# mean_dr=" << format_double(stats.mean_dr) << " std_dr=" << format_double(stats.std_dr)
        << " mean_abs_dr=" << format_double(stats.mean_abs_dr) << '\n';
    return out.str();
}

std::string bench_csv(std::span<const BenchRecord> records, const HardwareInfo& hw)
{
    std::ostringstream out;
    out << "# cpu=" << hw.cpu_model << " logical_cpus=" << hw.logical_cpus << " threads=" << hw.worker_threads
        << " compiler=" << hw.compiler << '\n';
    out << "backend,n_bin,min_sigma,max_sigma,width,height,warmup_runs,timed_runs,median_ms,p10_ms,p90_ms\n";
    for (const auto& r : records) {
        out << to_string(r.backend) << ',' << r.n_bin << ',' << format_double(r.min_sigma) << ','
            << format_double(r.max_sigma) << ',' << r.width << ',' << r.height << ',' << r.warmup_runs << ','
            << r.timed_runs << ',' << format_double(r.median_ms) << ',' << format_double(r.p10_ms) << ','
            << format_double(r.p90_ms) << '\n';
    }
    return out.str();
}

}  // namespace droplet
