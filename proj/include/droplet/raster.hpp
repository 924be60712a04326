#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace droplet {

/// Dense row-major 2-D raster. Pixel (x, y) is column x of row y.
template <typename T>
class Raster {
public:
    using value_type = T;

    Raster() = default;

    Raster(int width, int height, T fill = T{})
        : width_(width), height_(height)
    {
        check_shape(width, height);
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    Raster(int width, int height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data))
    {
        check_shape(width, height);
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
            throw std::invalid_argument("raster data length " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(width) + "x" +
                                        std::to_string(height));
        }
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }

    std::span<T> pixels() noexcept { return data_; }
    std::span<const T> pixels() const noexcept { return data_; }

    std::span<T> row(int y) noexcept
    {
        return std::span<T>(data_).subspan(static_cast<std::size_t>(y) * width_, width_);
    }
    std::span<const T> row(int y) const noexcept
    {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(y) * width_, width_);
    }

    const std::vector<T>& data() const noexcept { return data_; }

    bool same_shape(const Raster& other) const noexcept
    {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    static void check_shape(int width, int height)
    {
        if (width < 1 || height < 1) {
            throw std::invalid_argument("raster dimensions must be at least 1x1, got " +
                                        std::to_string(width) + "x" + std::to_string(height));
        }
    }

    std::size_t index(int x, int y) const noexcept
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Grayscale intensity image, float32 samples.
using Image = Raster<float>;

/// Index into [0, n) under half-sample symmetric reflection (abc|cba...).
/// Valid for any integer i, including offsets larger than n.
inline int reflect_index(int i, int n) noexcept
{
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

}  // namespace droplet
