#pragma once

#include "droplet/bench.hpp"
#include "droplet/detector.hpp"
#include "droplet/evaluate.hpp"
#include "droplet/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace droplet {

using Json = nlohmann::ordered_json;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Json params_to_json(const DetectionParams& params);

/// {"image", "params", "blobs": [...]} plus "histogram" and, when requested,
/// "timing". Both the CLI and the service emit exactly this document.
Json detection_to_json(const DetectionResult& result, std::string_view image_name, bool include_timing = true);

/// Reads the "blobs" array of a detection document.
std::vector<Blob> blobs_from_json(const Json& doc);

/// Header bin_center_px,count,volume_weight; one row per ladder scale.
std::string histogram_csv(const RadiusHistogram& hist);

/// "# seed=N" comment, header x,y,r, one circle per row.
std::string truths_csv(std::span<const GroundTruthCircle> truths, std::uint64_t seed);
std::vector<GroundTruthCircle> truths_from_csv(std::string_view text);

Json eval_to_json(const EvalReport& report);

/// image,precision_a,recall_a,precision_b,recall_b,dp,dr rows followed by
/// "# "-prefixed summary lines.
std::string parity_csv(const ParityStats& stats);

std::string bench_csv(std::span<const BenchRecord> records, const HardwareInfo& hardware);

/// Pretty-printed JSON with a trailing newline; shared by CLI and service.
std::string render_json(const Json& doc);

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

}  // namespace droplet
