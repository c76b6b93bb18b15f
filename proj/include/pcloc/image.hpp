#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace pcloc {

using Rgb8 = std::array<std::uint8_t, 3>;

// Interleaved 8-bit RGB image.
struct ImageRgb {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // 3 * width * height

    ImageRgb() = default;
    ImageRgb(int w, int h) : width(w), height(h), data(std::size_t(3) * w * h, 0) {}

    std::uint8_t* pixel(int x, int y) { return data.data() + 3 * (std::size_t(y) * width + x); }
    const std::uint8_t* pixel(int x, int y) const {
        return data.data() + 3 * (std::size_t(y) * width + x);
    }
    void set(int x, int y, const Rgb8& c) {
        auto* p = pixel(x, y);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    Rgb8 get(int x, int y) const {
        const auto* p = pixel(x, y);
        return {p[0], p[1], p[2]};
    }
    bool same_size(const ImageRgb& o) const { return width == o.width && height == o.height; }
};

struct ImageGray {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    ImageGray() = default;
    ImageGray(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0) {}

    std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

// ITU-R BT.601 luma, integer arithmetic (rounded).
inline ImageGray to_gray(const ImageRgb& img) {
    ImageGray g(img.width, img.height);
    const std::size_t n = std::size_t(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = img.data.data() + 3 * i;
        g.data[i] = std::uint8_t((299u * p[0] + 587u * p[1] + 114u * p[2] + 500u) / 1000u);
    }
    return g;
}

}  // namespace pcloc
