#include "droplet/image.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <string>

namespace droplet {

static_assert(std::endian::native == std::endian::little,
              "raw image format assumes a little-endian host");

namespace {

constexpr std::size_t kRawHeaderBytes = 8;

std::uint16_t quantize16(float v)
{
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
}

// ---------------------------------------------------------------- raw

Image decode_raw(std::span<const std::byte> bytes)
{
    if (bytes.size() < kRawHeaderBytes) throw ImageIoError("raw image: truncated header");
    std::uint32_t w = 0;
    std::uint32_t h = 0;
    std::memcpy(&w, bytes.data(), 4);
    std::memcpy(&h, bytes.data() + 4, 4);
    if (w == 0 || h == 0) throw ImageIoError("raw image: zero dimension");
    const std::uint64_t count = std::uint64_t{w} * h;
    if (count > (std::uint64_t{1} << 31) || bytes.size() != kRawHeaderBytes + count * 4) {
        throw ImageIoError("raw image: payload length does not match " + std::to_string(w) + "x" +
                           std::to_string(h));
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + kRawHeaderBytes, count * 4);
    Image img(static_cast<int>(w), static_cast<int>(h), std::move(data));
    try {
        require_finite(img);
    } catch (const std::invalid_argument& e) {
        throw ImageIoError(std::string("raw image: ") + e.what());
    }
    return img;
}

// ---------------------------------------------------------------- png

struct PngSource {
    std::span<const std::byte> bytes;
    std::size_t pos = 0;
};

struct PngErrorState {
    char message[256] = {};
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t length)
{
    auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
    if (src->pos + length > src->bytes.size()) png_error(png, "unexpected end of PNG data");
    std::memcpy(out, src->bytes.data() + src->pos, length);
    src->pos += length;
}

void png_on_error(png_structp png, png_const_charp msg)
{
    auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
    std::snprintf(state->message, sizeof state->message, "%s", msg);
    png_longjmp(png, 1);
}

void png_on_warning(png_structp, png_const_charp) {}

Image decode_png(std::span<const std::byte> bytes)
{
    PngErrorState err;
    PngSource src{bytes, 0};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_on_error, png_on_warning);
    if (png == nullptr) throw ImageIoError("png: cannot allocate reader");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageIoError("png: cannot allocate info");
    }

    // Everything touched after setjmp lives in heap storage reached through
    // pointers fixed before the call.
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError(std::string("png: ") + err.message);
    }

    png_set_read_fn(png, &src, png_read_from_span);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("png: only single-channel grayscale images are supported");
    }
    if (depth != 8 && depth != 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("png: unsupported bit depth " + std::to_string(depth));
    }

    const std::size_t bytes_per_sample = depth == 16 ? 2 : 1;
    const std::size_t stride = static_cast<std::size_t>(w) * bytes_per_sample;
    buffer.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::vector<float> data(static_cast<std::size_t>(w) * h);
    if (depth == 8) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = buffer[i] / 255.0f;
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const unsigned v = (unsigned{buffer[2 * i]} << 8) | buffer[2 * i + 1];
            data[i] = static_cast<float>(v / 65535.0);
        }
    }
    return Image(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length)
{
    auto* out = static_cast<std::vector<std::byte>*>(png_get_io_ptr(png));
    const auto* first = reinterpret_cast<const std::byte*>(data);
    out->insert(out->end(), first, first + length);
}

void png_flush_noop(png_structp) {}

// ---------------------------------------------------------------- tiff

struct TiffStream {
    std::vector<std::byte> buffer;
    std::span<const std::byte> view;
    toff_t pos = 0;
    bool writable = false;
};

tmsize_t tiff_read(thandle_t handle, void* dst, tmsize_t size)
{
    auto* s = static_cast<TiffStream*>(handle);
    if (s->pos >= s->view.size()) return 0;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(size), s->view.size() - s->pos);
    std::memcpy(dst, s->view.data() + s->pos, n);
    s->pos += n;
    return static_cast<tmsize_t>(n);
}

tmsize_t tiff_write(thandle_t handle, void* src, tmsize_t size)
{
    auto* s = static_cast<TiffStream*>(handle);
    if (!s->writable) return 0;
    const auto end = s->pos + static_cast<std::size_t>(size);
    if (end > s->buffer.size()) s->buffer.resize(end);
    std::memcpy(s->buffer.data() + s->pos, src, static_cast<std::size_t>(size));
    s->pos = end;
    s->view = s->buffer;
    return size;
}

toff_t tiff_seek(thandle_t handle, toff_t offset, int whence)
{
    auto* s = static_cast<TiffStream*>(handle);
    toff_t base = 0;
    if (whence == SEEK_CUR) base = s->pos;
    if (whence == SEEK_END) base = s->writable ? s->buffer.size() : s->view.size();
    s->pos = base + offset;
    if (s->writable && s->pos > s->buffer.size()) {
        s->buffer.resize(s->pos);
        s->view = s->buffer;
    }
    return s->pos;
}

int tiff_close(thandle_t) { return 0; }

toff_t tiff_size(thandle_t handle)
{
    auto* s = static_cast<TiffStream*>(handle);
    return s->writable ? s->buffer.size() : s->view.size();
}

int tiff_map(thandle_t, void**, toff_t*) { return 0; }
void tiff_unmap(thandle_t, void*, toff_t) {}

thread_local std::string tiff_last_error;

void tiff_error_handler(const char* module, const char* fmt, va_list ap)
{
    char msg[512];
    std::vsnprintf(msg, sizeof msg, fmt, ap);
    tiff_last_error = (module != nullptr ? std::string(module) + ": " : std::string()) + msg;
}

void install_tiff_handlers()
{
    static std::once_flag once;
    std::call_once(once, [] {
        TIFFSetErrorHandler(tiff_error_handler);
        TIFFSetWarningHandler(nullptr);
    });
}

struct TiffCloser {
    void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

Image decode_tiff(std::span<const std::byte> bytes)
{
    install_tiff_handlers();
    tiff_last_error.clear();
    TiffStream stream;
    stream.view = bytes;
    TiffHandle tif(TIFFClientOpen("memory", "rm", &stream, tiff_read, tiff_write, tiff_seek,
                                  tiff_close, tiff_size, tiff_map, tiff_unmap));
    if (!tif) throw ImageIoError("tiff: cannot open (" + tiff_last_error + ")");

    std::uint32_t w = 0;
    std::uint32_t h = 0;
    std::uint16_t spp = 1;
    std::uint16_t bps = 1;
    std::uint16_t sample_format = SAMPLEFORMAT_UINT;
    std::uint16_t photometric = PHOTOMETRIC_MINISBLACK;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bps);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &sample_format);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PHOTOMETRIC, &photometric);

    if (w == 0 || h == 0) throw ImageIoError("tiff: zero dimension");
    if (spp != 1) throw ImageIoError("tiff: only single-channel grayscale images are supported");
    if (bps != 8 && bps != 16) throw ImageIoError("tiff: unsupported bit depth " + std::to_string(bps));
    if (sample_format != SAMPLEFORMAT_UINT) throw ImageIoError("tiff: only unsigned integer samples are supported");
    if (photometric != PHOTOMETRIC_MINISBLACK && photometric != PHOTOMETRIC_MINISWHITE) {
        throw ImageIoError("tiff: unsupported photometric interpretation");
    }
    if (TIFFIsTiled(tif.get())) throw ImageIoError("tiff: tiled images are not supported");

    const double max_value = bps == 16 ? 65535.0 : 255.0;
    const bool invert = photometric == PHOTOMETRIC_MINISWHITE;
    std::vector<std::uint8_t> line(static_cast<std::size_t>(TIFFScanlineSize(tif.get())));
    std::vector<float> data(static_cast<std::size_t>(w) * h);
    for (std::uint32_t y = 0; y < h; ++y) {
        if (TIFFReadScanline(tif.get(), line.data(), y, 0) < 0) {
            throw ImageIoError("tiff: read failed at row " + std::to_string(y) + " (" + tiff_last_error + ")");
        }
        float* dst = data.data() + static_cast<std::size_t>(y) * w;
        for (std::uint32_t x = 0; x < w; ++x) {
            double v;
            if (bps == 16) {
                std::uint16_t s;
                std::memcpy(&s, line.data() + 2 * x, 2);
                v = s;
            } else {
                v = line[x];
            }
            if (invert) v = max_value - v;
            dst[x] = static_cast<float>(v / max_value);
        }
    }
    return Image(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

}  // namespace

std::optional<ImageFormat> sniff_format(std::span<const std::byte> bytes)
{
    static constexpr unsigned char png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_magic, 8) == 0) return ImageFormat::Png;
    if (bytes.size() >= 4) {
        const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
        if ((b[0] == 'I' && b[1] == 'I' && b[2] == 42 && b[3] == 0) ||
            (b[0] == 'M' && b[1] == 'M' && b[2] == 0 && b[3] == 42)) {
            return ImageFormat::Tiff;
        }
    }
    if (bytes.size() >= kRawHeaderBytes) {
        std::uint32_t w = 0;
        std::uint32_t h = 0;
        std::memcpy(&w, bytes.data(), 4);
        std::memcpy(&h, bytes.data() + 4, 4);
        if (w > 0 && h > 0 && bytes.size() == kRawHeaderBytes + std::uint64_t{w} * h * 4) {
            return ImageFormat::Raw;
        }
    }
    return std::nullopt;
}

Image decode_image(std::span<const std::byte> bytes, std::optional<ImageFormat> format)
{
    if (!format) format = sniff_format(bytes);
    if (!format) throw ImageIoError("unrecognized image encoding");
    switch (*format) {
    case ImageFormat::Png: return decode_png(bytes);
    case ImageFormat::Tiff: return decode_tiff(bytes);
    case ImageFormat::Raw: return decode_raw(bytes);
    }
    throw ImageIoError("unrecognized image encoding");
}

std::vector<std::byte> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> bytes(raw.size());
    std::memcpy(bytes.data(), raw.data(), raw.size());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("write failed for " + path.string());
}

Image load_image(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    try {
        return decode_image(bytes);
    } catch (const ImageIoError& e) {
        throw ImageIoError(path.string() + ": " + e.what());
    }
}

std::vector<std::byte> encode_png16(const Image& img)
{
    std::vector<std::byte> out;
    std::vector<std::uint8_t> buffer(img.size() * 2);
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        const std::uint16_t v = quantize16(px[i]);
        buffer[2 * i] = static_cast<std::uint8_t>(v >> 8);
        buffer[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
    for (int y = 0; y < img.height(); ++y) {
        rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y) * img.width() * 2;
    }

    PngErrorState err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_on_error, png_on_warning);
    if (png == nullptr) throw ImageIoError("png: cannot allocate writer");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageIoError("png: cannot allocate info");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError(std::string("png: ") + err.message);
    }
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()),
                 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::vector<std::byte> encode_tiff16(const Image& img)
{
    install_tiff_handlers();
    tiff_last_error.clear();
    TiffStream stream;
    stream.writable = true;
    {
        TiffHandle tif(TIFFClientOpen("memory", "w", &stream, tiff_read, tiff_write, tiff_seek,
                                      tiff_close, tiff_size, tiff_map, tiff_unmap));
        if (!tif) throw ImageIoError("tiff: cannot create writer (" + tiff_last_error + ")");
        TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width()));
        TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height()));
        TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, 1);
        TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, 16);
        TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT, SAMPLEFORMAT_UINT);
        TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
        TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
        TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
        TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, TIFFDefaultStripSize(tif.get(), 0));

        std::vector<std::uint16_t> line(static_cast<std::size_t>(img.width()));
        for (int y = 0; y < img.height(); ++y) {
            auto src = img.row(y);
            std::transform(src.begin(), src.end(), line.begin(), quantize16);
            if (TIFFWriteScanline(tif.get(), line.data(), static_cast<std::uint32_t>(y), 0) < 0) {
                throw ImageIoError("tiff: write failed (" + tiff_last_error + ")");
            }
        }
    }
    return std::move(stream.buffer);
}

std::vector<std::byte> encode_raw(const Image& img)
{
    std::vector<std::byte> out(kRawHeaderBytes + img.size() * 4);
    const auto w = static_cast<std::uint32_t>(img.width());
    const auto h = static_cast<std::uint32_t>(img.height());
    std::memcpy(out.data(), &w, 4);
    std::memcpy(out.data() + 4, &h, 4);
    std::memcpy(out.data() + kRawHeaderBytes, img.pixels().data(), img.size() * 4);
    return out;
}

void write_image(const std::filesystem::path& path, const Image& img)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") {
        write_file(path, encode_png16(img));
    } else if (ext == ".tif" || ext == ".tiff") {
        write_file(path, encode_tiff16(img));
    } else {
        write_file(path, encode_raw(img));
    }
}

}  // namespace droplet
