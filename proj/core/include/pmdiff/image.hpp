#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmdiff {

class SizeMismatchError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Interleaved (row-major, channel-last) float image. RGB values live in [0,1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
        : width(w), height(h), channels(c), data(w * h * c, fill) {}

    double& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
    double at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
    std::size_t pixels() const { return width * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

struct Mask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t w, std::size_t h, bool fill = false) : width(w), height(h), data(w * h, fill ? 1 : 0) {}

    bool at(std::size_t x, std::size_t y) const { return data[y * width + x] != 0; }
    void set(std::size_t x, std::size_t y, bool v) { data[y * width + x] = v ? 1 : 0; }
    std::size_t count() const;
};

inline std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
}

}  // namespace pmdiff
