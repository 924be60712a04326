#pragma once

#include "droplet/raster.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace droplet {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ImageFormat { Png, Tiff, Raw };

/// Guess the encoding from magic bytes. Anything that is not PNG or TIFF is
/// treated as raw when its length matches the raw header.
std::optional<ImageFormat> sniff_format(std::span<const std::byte> bytes);

/// Decode 8/16-bit grayscale PNG or TIFF (scaled to [0,1] by the format's
/// maximum value) or the raw float format (passed through). Multi-channel
/// images are rejected.
Image decode_image(std::span<const std::byte> bytes,
                   std::optional<ImageFormat> format = std::nullopt);

Image load_image(const std::filesystem::path& path);

/// 16-bit grayscale PNG, samples round(clamp(v, 0, 1) * 65535).
std::vector<std::byte> encode_png16(const Image& img);
/// 16-bit grayscale uncompressed TIFF, same quantization as encode_png16.
std::vector<std::byte> encode_tiff16(const Image& img);
/// Little-endian {u32 width, u32 height} followed by row-major float32 samples.
std::vector<std::byte> encode_raw(const Image& img);

/// Format chosen by extension: .png, .tif/.tiff, anything else raw.
void write_image(const std::filesystem::path& path, const Image& img);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

/// Throws std::invalid_argument on NaN/Inf.
void require_finite(const Image& img);

/// Nearest-rank quantile: the ceil(q*n)-th smallest value (1-based), q in [0,1].
float nearest_rank_quantile(std::span<const float> values, double q);

/// Linear rescale between the saturation/2 and 1-saturation/2 quantiles,
/// clamped to [0,1]. A degenerate range (hi == lo) yields all zeros.
Image contrast_stretch(const Image& img, double saturation);

/// Separable Gaussian blur with reflect boundaries; kernel radius ceil(truncate*sigma).
Image gaussian_smooth(const Image& img, double sigma, double truncate = 4.0);

struct PreprocessOptions {
    bool enabled = true;
    double smooth_sigma = 1.0;
    double saturation = 0.0035;

    friend bool operator==(const PreprocessOptions&, const PreprocessOptions&) = default;
};

/// Smoothing (skipped when smooth_sigma == 0) followed by contrast_stretch.
Image preprocess(const Image& img, double smooth_sigma, double saturation);
inline Image preprocess(const Image& img, const PreprocessOptions& options)
{
    return preprocess(img, options.smooth_sigma, options.saturation);
}

}  // namespace droplet
